import json

import numpy as np
import pytest

from engine.history import (
    create_run_directory,
    file_sha256,
    run_logger,
    runs_dir,
    write_metadata,
)
from engine.seeding import stream_key, substream


class TestRunDirectory:
    def test_named_run_under_home(self, semgraph_home):
        run_dir = create_run_directory("train", run_name="first")
        assert run_dir == runs_dir() / "train" / "first"
        assert run_dir.is_dir()

    def test_explicit_out_dir(self, tmp_path):
        run_dir = create_run_directory("train", run_name="ignored", out_dir=tmp_path / "mine")
        assert run_dir == tmp_path / "mine"
        assert run_dir.is_dir()

    def test_metadata_gets_timestamp(self, tmp_path):
        path = write_metadata(tmp_path, {"command": "eval", "path": tmp_path})
        data = json.loads(path.read_text())
        assert data["command"] == "eval"
        assert data["path"] == str(tmp_path)
        assert "timestamp" in data

    def test_logger_echoes_and_appends(self, tmp_path):
        echoed = []
        log = run_logger(tmp_path, echo=echoed.append)
        log("one")
        log("two")
        assert echoed == ["one", "two"]
        lines = (tmp_path / "run_log.txt").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].endswith("] two")

    def test_file_hash(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_bytes(b"abc")
        assert file_sha256(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


class TestSeeding:
    def test_streams_are_independent(self):
        a = substream(0, "shuffle").random(5)
        b = substream(0, "dropout").random(5)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, substream(0, "shuffle").random(5))

    def test_key_layout(self):
        assert stream_key(7, "folds") == [7, 5]
        assert stream_key(7, "dropout", 3, 9) == [7, 4, 3, 9]

    def test_unknown_stream(self):
        with pytest.raises(KeyError):
            substream(0, "weather")
