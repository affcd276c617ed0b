# engine/errors.py


class SemGraphError(Exception):
    pass


class FormatError(SemGraphError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyCloudError(FormatError):
    pass


class DatasetParseError(FormatError):
    def __init__(self, message, line=None, path=None, graph_index=None):
        self.graph_index = graph_index
        if graph_index is not None:
            message = f"graph {graph_index}: {message}"
        super().__init__(message, line=line, path=path)


class ShapeError(SemGraphError, ValueError):
    pass


class NumericError(SemGraphError, ArithmeticError):
    pass


class TrainingAborted(NumericError):
    def __init__(self, message, epoch=None, batch=None, sample_id=None):
        self.epoch = epoch
        self.batch = batch
        self.sample_id = sample_id
        super().__init__(f"{message} (epoch={epoch}, batch={batch}, sample={sample_id})")


class DegeneracyError(SemGraphError, ValueError):
    def __init__(self, message, node_index=None):
        self.node_index = node_index
        super().__init__(message)


class ConfigError(SemGraphError, ValueError):
    pass


class VersionMismatchError(DatasetParseError):
    pass


class TruncatedFileError(DatasetParseError):
    pass


class LabelRangeError(DatasetParseError):
    pass
