import json

import numpy as np
import pytest

from engine.checkpoint import load_checkpoint, save_checkpoint
from engine.errors import FormatError
from version import ENGINE_VERSION


class TestCheckpoint:
    def test_arrays_and_meta_survive(self, tmp_path, rng):
        arrays = {"conv0.W": rng.normal(size=(3, 32)), "readout.out.b": np.zeros((1, 4))}
        path = save_checkpoint(tmp_path / "model.ckpt", arrays, {"num_classes": 4})
        assert path.name == "model.ckpt"

        loaded, meta = load_checkpoint(path)
        assert set(loaded) == set(arrays)
        np.testing.assert_array_equal(loaded["conv0.W"], arrays["conv0.W"])
        assert meta["num_classes"] == 4
        assert meta["engine_version"] == ENGINE_VERSION

    def test_reserved_names_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(tmp_path / "m.npz", {"__meta__": np.zeros(1)})

    def test_unsupported_format_version(self, tmp_path):
        path = tmp_path / "old.npz"
        with open(path, "wb") as f:
            np.savez(f, w=np.zeros(2), __format__=np.array("99"), __meta__=np.array(json.dumps({})))
        with pytest.raises(FormatError, match="not supported"):
            load_checkpoint(path)

    def test_missing_format_entry(self, tmp_path):
        path = tmp_path / "plain.npz"
        with open(path, "wb") as f:
            np.savez(f, w=np.zeros(2))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.npz")
