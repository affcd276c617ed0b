import numpy as np

# Fixed ids keep each consumer's stream stable when others are added or removed.
STREAMS = {
    "subsample": 1,
    "init": 2,
    "shuffle": 3,
    "dropout": 4,
    "folds": 5,
    "synthetic": 6,
}


def stream_key(seed: int, name: str, *extra: int) -> list[int]:
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return [int(seed), STREAMS[name], *map(int, extra)]


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(stream_key(seed, name, *extra))
