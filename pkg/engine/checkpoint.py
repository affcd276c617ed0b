# Checkpoints are numpy .npz archives: one float64 array per named parameter
# plus two reserved string entries, "__format__" (layout version) and
# "__meta__" (JSON: model config, class names, engine version).

import json
from pathlib import Path

import numpy as np

from engine.errors import FormatError
from version import CHECKPOINT_FORMAT_VERSION, ENGINE_VERSION

_RESERVED = {"__format__", "__meta__"}


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    bad = _RESERVED.intersection(arrays)
    if bad:
        raise ValueError(f"parameter names collide with reserved entries: {sorted(bad)}")

    meta = dict(meta or {})
    meta.setdefault("engine_version", ENGINE_VERSION)
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    payload["__format__"] = np.array(str(CHECKPOINT_FORMAT_VERSION))
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))

    # np.savez appends .npz when missing; write through a handle to keep the exact name.
    with open(path, "wb") as f:
        np.savez(f, **payload)
    return path


def load_checkpoint(path):
    """Returns (arrays, meta)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")

    with np.load(path, allow_pickle=False) as archive:
        names = list(archive.files)
        if "__format__" not in names:
            raise FormatError("missing __format__ entry", path=path)
        version = int(str(archive["__format__"]))
        if version != CHECKPOINT_FORMAT_VERSION:
            raise FormatError(
                f"checkpoint format {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                path=path,
            )
        meta = json.loads(str(archive["__meta__"])) if "__meta__" in names else {}
        arrays = {name: archive[name].copy() for name in names if name not in _RESERVED}
    return arrays, meta
