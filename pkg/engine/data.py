# engine/data.py

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from engine.errors import (
    DatasetParseError,
    LabelRangeError,
    TruncatedFileError,
    VersionMismatchError,
)
from engine.gnn import EdgeStats, GraphSample
from engine.partition import SemanticGraph, complete_adjacency
from engine.seeding import substream
from version import DATASET_FORMAT_VERSION

FEATURE_KINDS = ("position3d", "one_hot")


@dataclass
class GraphDataset:
    samples: list[GraphSample]
    class_names: list[str]
    feature_kind: str = "position3d"
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("graph dataset is empty")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"feature_kind must be one of {FEATURE_KINDS}, got {self.feature_kind!r}")
        C = len(self.class_names)
        for i, s in enumerate(self.samples):
            if not 0 <= s.label < C:
                raise ValueError(f"sample {i} has label {s.label} outside [0, {C})")
        widths = {s.num_features for s in self.samples}
        if len(widths) != 1:
            raise ValueError(f"samples disagree on feature width: {sorted(widths)}")

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self):
        return len(self.class_names)

    @property
    def feature_width(self):
        return self.samples[0].num_features

    @property
    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices, name=None):
        return GraphDataset(
            [self.samples[int(i)] for i in indices],
            list(self.class_names),
            self.feature_kind,
            name=name or self.name,
        )


def sample_from_graph(graph: SemanticGraph) -> GraphSample:
    return GraphSample(
        node_features=graph.node_positions.copy(),
        base_adjacency=graph.adjacency.copy(),
        label=graph.class_label,
        name=graph.name,
    )


def dataset_summary(ds: GraphDataset) -> dict:
    counts = np.array([s.num_nodes for s in ds.samples])
    values, freq = np.unique(counts, return_counts=True)
    return {
        "graphs": len(ds),
        "classes": ds.num_classes,
        "feature_kind": ds.feature_kind,
        "feature_width": ds.feature_width,
        "mean_nodes": float(counts.mean()),
        "node_histogram": {int(v): int(f) for v, f in zip(values, freq)},
        "class_counts": {ds.class_names[c]: int((ds.labels == c).sum()) for c in range(ds.num_classes)},
    }


def compute_edge_stats(ds: GraphDataset) -> EdgeStats:
    """Mean and standard deviation of node distances over every edge of every graph."""
    distances = []
    for s in ds.samples:
        x = s.node_features
        diff = x[:, None, :] - x[None, :, :]
        d = np.sqrt((diff * diff).sum(axis=2))
        distances.append(d[s.base_adjacency > 0])
    distances = np.concatenate(distances) if distances else np.array([])
    if len(distances) == 0:
        raise ValueError("dataset has no edges to compute distance statistics from")
    sigma = float(distances.std())
    if sigma <= 0:
        raise ValueError("all node distances are identical; standard deviation is zero")
    return EdgeStats(mu=float(distances.mean()), sigma=sigma)


# ---------------- SEMGRAPH v1 ----------------

def _token(text):
    return "_".join(str(text).split()) or "_"


def save_dataset(ds: GraphDataset, path):
    """
    Write `ds` as SEMGRAPH v1 text. Class and sample names are stored as single
    tokens, so any run of whitespace inside a name becomes one `_`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        DATASET_FORMAT_VERSION,
        f"classes {ds.num_classes}",
        "names " + " ".join(_token(c) for c in ds.class_names),
        f"features {ds.feature_kind}",
    ]
    for s in ds.samples:
        header = f"graph {s.num_nodes} {s.label}"
        if s.name:
            header += f" {_token(s.name)}"
        lines.append(header)
        for row in s.node_features.tolist():
            lines.append(" ".join(repr(v) for v in row))
        if np.array_equal(s.base_adjacency, complete_adjacency(s.num_nodes)):
            lines.append("complete")
        else:
            for row in s.base_adjacency.astype(np.int64).tolist():
                lines.append(" ".join(str(v) for v in row))

    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path


class _LineReader:
    def __init__(self, path):
        self.path = path
        with open(path, "r", encoding="utf-8") as f:
            self.lines = [l.rstrip("\n") for l in f]
        self.pos = 0

    @property
    def line_no(self):
        return self.pos + 1

    def at_end(self):
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        return self.pos >= len(self.lines)

    def peek(self):
        return None if self.at_end() else self.lines[self.pos].strip()

    def next(self, graph_index=None, what="line"):
        if self.at_end():
            raise TruncatedFileError(
                f"file ends early, expected {what}", line=self.line_no, path=self.path, graph_index=graph_index
            )
        text = self.lines[self.pos].strip()
        self.pos += 1
        return text


def load_dataset(path) -> GraphDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset not found: {path}")
    reader = _LineReader(path)

    header = reader.next(what="header")
    if header != DATASET_FORMAT_VERSION:
        raise VersionMismatchError(f"expected header {DATASET_FORMAT_VERSION!r}, got {header!r}", line=1, path=path)

    classes_line = reader.next(what="classes line")
    tokens = classes_line.split()
    if len(tokens) != 2 or tokens[0] != "classes" or not tokens[1].isdigit():
        raise DatasetParseError(f"expected 'classes C', got {classes_line!r}", line=reader.pos, path=path)
    num_classes = int(tokens[1])

    class_names = [str(c) for c in range(num_classes)]
    feature_kind = "position3d"
    while reader.peek() is not None and reader.peek().split()[0] in ("names", "features"):
        key, *values = reader.next().split()
        if key == "names":
            if len(values) != num_classes:
                raise DatasetParseError(
                    f"{len(values)} class names for {num_classes} classes", line=reader.pos, path=path
                )
            class_names = values
        else:
            feature_kind = values[0] if values else ""

    samples = []
    width = None
    while not reader.at_end():
        g = len(samples)
        graph_line = reader.next(g, "graph header")
        tokens = graph_line.split()
        if len(tokens) not in (3, 4) or tokens[0] != "graph":
            raise DatasetParseError(f"expected 'graph <n> <label>', got {graph_line!r}", line=reader.pos, path=path, graph_index=g)
        try:
            n, label = int(tokens[1]), int(tokens[2])
        except ValueError:
            raise DatasetParseError(f"bad graph header {graph_line!r}", line=reader.pos, path=path, graph_index=g)
        if n < 1:
            raise DatasetParseError("graph has no nodes", line=reader.pos, path=path, graph_index=g)
        if not 0 <= label < num_classes:
            raise LabelRangeError(
                f"label {label} outside [0, {num_classes})", line=reader.pos, path=path, graph_index=g
            )
        name = tokens[3] if len(tokens) == 4 else None

        features = []
        for _ in range(n):
            row = reader.next(g, "node feature line").split()
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DatasetParseError(f"bad node feature line {' '.join(row)!r}", line=reader.pos, path=path, graph_index=g)
            if width is None:
                width = len(values)
            if len(values) != width or width == 0:
                raise DatasetParseError(
                    f"node feature line has {len(values)} values, expected {width}", line=reader.pos, path=path, graph_index=g
                )
            features.append(values)

        first = reader.next(g, "'complete' or adjacency rows")
        if first == "complete":
            adjacency = complete_adjacency(n)
        else:
            rows = [first] + [reader.next(g, "adjacency row") for _ in range(n - 1)]
            adjacency = np.zeros((n, n), dtype=np.int64)
            for i, row in enumerate(rows):
                vals = row.split()
                if len(vals) != n or any(v not in ("0", "1") for v in vals):
                    raise DatasetParseError(
                        f"adjacency row must hold {n} values of 0/1", line=reader.pos - (n - 1 - i), path=path, graph_index=g
                    )
                adjacency[i] = [int(v) for v in vals]

        try:
            samples.append(GraphSample(np.array(features), adjacency, label, name=name))
        except ValueError as e:
            raise DatasetParseError(str(e), line=reader.pos, path=path, graph_index=g)

    if not samples:
        raise TruncatedFileError("dataset holds no graphs", line=reader.line_no, path=path)
    try:
        return GraphDataset(samples, class_names, feature_kind, name=path.stem)
    except ValueError as e:
        raise DatasetParseError(str(e), path=path)


# ---------------- TU FORMAT ----------------

def _read_int_column(path, column=0):
    if not path.exists():
        raise FileNotFoundError(f"TU file not found: {path}")
    frame = pd.read_csv(path, header=None, sep=",", skipinitialspace=True, dtype=str)
    try:
        return frame.iloc[:, column].str.strip().astype(float).astype(np.int64).to_numpy()
    except ValueError as e:
        raise DatasetParseError(f"non-integer entry: {e}", path=path)


def load_tu(directory, name, num_node_labels: int | None = None) -> GraphDataset:
    """
    Read a TU benchmark (A, graph_indicator, graph_labels, node_labels files).
    Node labels become one-hot features, graph labels are remapped to 0..C-1
    and edges are symmetrized.
    """
    directory = Path(directory)
    prefix = directory / name
    print(f"Loading TU dataset {name} from {directory}...")

    indicator = _read_int_column(Path(f"{prefix}_graph_indicator.txt"))
    graph_labels_raw = _read_int_column(Path(f"{prefix}_graph_labels.txt"))
    node_labels = _read_int_column(Path(f"{prefix}_node_labels.txt"))

    edge_path = Path(f"{prefix}_A.txt")
    if not edge_path.exists():
        raise FileNotFoundError(f"TU file not found: {edge_path}")
    try:
        edges = pd.read_csv(edge_path, header=None, sep=",", skipinitialspace=True).to_numpy(dtype=np.int64)
    except pd.errors.EmptyDataError:
        edges = np.zeros((0, 2), dtype=np.int64)
    if edges.ndim != 2 or (len(edges) and edges.shape[1] != 2):
        raise DatasetParseError("edge list must have two columns", path=edge_path)

    num_graphs = len(graph_labels_raw)
    num_nodes = len(indicator)
    if len(node_labels) != num_nodes:
        raise DatasetParseError(
            f"{len(node_labels)} node labels for {num_nodes} nodes in graph indicator", path=f"{prefix}_node_labels.txt"
        )
    if num_nodes == 0 or indicator.min() < 1 or indicator.max() > num_graphs:
        raise DatasetParseError(
            f"graph indicator values must lie in [1, {num_graphs}]", path=f"{prefix}_graph_indicator.txt"
        )
    present = np.unique(indicator)
    if len(present) != num_graphs:
        missing = sorted(set(range(1, num_graphs + 1)) - set(present.tolist()))
        raise DatasetParseError(f"graphs without nodes: {missing[:10]}", path=f"{prefix}_graph_indicator.txt")
    if len(edges) and (edges.min() < 1 or edges.max() > num_nodes):
        raise DatasetParseError(f"edge endpoints must lie in [1, {num_nodes}]", path=edge_path)

    if node_labels.min() < 0:
        raise DatasetParseError("negative node labels are not supported", path=f"{prefix}_node_labels.txt")
    width = int(node_labels.max()) + 1
    if num_node_labels is not None:
        if width > num_node_labels:
            print(
                f"WARNING: node label {width - 1} is outside the declared alphabet of {num_node_labels}; "
                f"one-hot width grows to {width}"
            )
        width = max(width, int(num_node_labels))

    classes = np.unique(graph_labels_raw)
    label_index = {int(c): i for i, c in enumerate(classes)}

    # Nodes of one graph may not be contiguous; map global ids to local positions per graph.
    members = [np.flatnonzero(indicator == g + 1) for g in range(num_graphs)]
    local = np.empty(num_nodes, dtype=np.int64)
    for nodes in members:
        local[nodes] = np.arange(len(nodes))
    adjacency = [np.zeros((len(nodes), len(nodes)), dtype=np.int64) for nodes in members]

    for a, b in edges - 1:
        ga, gb = indicator[a] - 1, indicator[b] - 1
        if ga != gb:
            raise DatasetParseError(f"edge ({a + 1}, {b + 1}) joins graphs {ga + 1} and {gb + 1}", path=edge_path)
        if a == b:
            continue
        adjacency[ga][local[a], local[b]] = 1
        adjacency[ga][local[b], local[a]] = 1

    samples = []
    for g, nodes in enumerate(members):
        features = np.zeros((len(nodes), width))
        features[np.arange(len(nodes)), node_labels[nodes]] = 1.0
        samples.append(
            GraphSample(features, adjacency[g], label_index[int(graph_labels_raw[g])], name=f"{name}_{g + 1}")
        )

    print(f"Loaded {num_graphs} graphs, {len(classes)} classes, {width} node labels")
    return GraphDataset(samples, [str(int(c)) for c in classes], "one_hot", name=name)


# ---------------- SPLITS ----------------

@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int
    stratified: bool = False

    def fold_sizes(self):
        return np.bincount(self.assignments, minlength=self.k)

    def test_indices(self, i):
        return np.flatnonzero(self.assignments == i)

    def train_indices(self, i):
        return np.flatnonzero(self.assignments != i)


def make_folds(ds: GraphDataset, k: int = 10, seed: int = 0, stratified: bool = False) -> FoldPlan:
    n = len(ds)
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")

    rng = substream(seed, "folds")
    assignments = np.empty(n, dtype=np.int64)
    if stratified:
        # Classes are dealt one after another, continuing the round-robin so fold sizes stay balanced.
        labels = ds.labels
        position = 0
        for c in np.unique(labels):
            members = rng.permutation(np.flatnonzero(labels == c))
            assignments[members] = (position + np.arange(len(members))) % k
            position += len(members)
    else:
        order = rng.permutation(n)
        assignments[order] = np.arange(n) % k
    return FoldPlan(k=k, assignments=assignments, seed=seed, stratified=stratified)


def split_by_fold(ds: GraphDataset, plan: FoldPlan, i: int):
    if not 0 <= i < plan.k:
        raise ValueError(f"fold {i} outside [0, {plan.k})")
    if len(plan.assignments) != len(ds):
        raise ValueError(f"fold plan covers {len(plan.assignments)} samples, dataset has {len(ds)}")
    return ds.subset(plan.train_indices(i)), ds.subset(plan.test_indices(i))


def read_split_ids(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Split file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def split_by_ids(ds: GraphDataset, ids):
    """(samples whose name is in ids, the rest). Names are matched without file suffixes."""
    wanted = {Path(i).stem for i in ids}
    inside = [i for i, s in enumerate(ds.samples) if s.name in wanted]
    outside = [i for i, s in enumerate(ds.samples) if s.name not in wanted]
    return inside, outside
