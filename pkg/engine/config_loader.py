# engine/config_loader.py

import os
from pathlib import Path

import yaml

from engine.errors import ConfigError
from engine.gnn import ModelConfig

THREADS_ENV = "SEMGRAPH_THREADS"


DEFAULTS = {
    "icp": {
        "max_iters": 50,
        "tol": 1e-6,
        "subsample": 1024,
        "format": None,
    },
    "partition": {
        "tau": 0.283,
    },
    "model": {k: v for k, v in ModelConfig().to_dict().items() if k != "seed"},
    "training": {
        "epochs": 200,
        "batch": 20,
        "lr": 0.001,
        "seed": 0,
        "folds": 10,
        "stratified": False,
    },
}

TOP_LEVEL_KEYS = ("run_name",)

# flat key -> owning section
KEY_SECTIONS = {key: section for section, values in DEFAULTS.items() for key in values}


def _copy_defaults():
    return {section: dict(values) for section, values in DEFAULTS.items()}


class RunConfig:
    """
    Run settings from an optional YAML file plus command-line overrides.
    The file may be flat (`tau: 0.3`) or sectioned (`partition: {tau: 0.3}`);
    precedence is overrides > file > defaults.
    """

    def __init__(self, config_path=None, overrides=None):
        self.path = Path(config_path) if config_path else None
        self.data = _copy_defaults()
        self.run_name = None
        self._apply(self._load_yaml(), source=str(self.path))
        self._apply({k: v for k, v in (overrides or {}).items() if v is not None}, source="command line")

    def _load_yaml(self):
        if self.path is None:
            return {}
        if not self.path.exists():
            raise FileNotFoundError(f"Run config not found: {self.path}")
        with open(self.path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigError(f"{self.path}: top level must be a mapping, got {type(data).__name__}")
        return data

    def _apply(self, values, source):
        for key, value in values.items():
            if key in TOP_LEVEL_KEYS:
                self.run_name = value
            elif key in DEFAULTS:
                if not isinstance(value, dict):
                    raise ConfigError(f"{source}: section {key!r} must be a mapping")
                for sub_key, sub_value in value.items():
                    if sub_key not in DEFAULTS[key]:
                        raise ConfigError(f"{source}: unknown key {sub_key!r} in section {key!r}")
                    self.data[key][sub_key] = sub_value
            elif key in KEY_SECTIONS:
                self.data[KEY_SECTIONS[key]][key] = value
            else:
                raise ConfigError(f"{source}: unknown config key {key!r}")

    def section(self, section_name):
        return self.data.get(section_name, {})

    def get(self, key):
        if key not in KEY_SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        return self.data[KEY_SECTIONS[key]][key]

    def _number(self, key, kind, minimum=None):
        value = self.get(key)
        try:
            number = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a {kind.__name__}, got {value!r}")
        if minimum is not None and number < minimum:
            raise ConfigError(f"{key} must be >= {minimum}, got {number}")
        return number

    @property
    def tau(self):
        tau = self._number("tau", float)
        if tau <= 0:
            raise ConfigError(f"tau must be > 0, got {tau}")
        return tau

    @property
    def max_iters(self):
        return self._number("max_iters", int, minimum=1)

    @property
    def tol(self):
        tol = self._number("tol", float)
        if tol <= 0:
            raise ConfigError(f"tol must be > 0, got {tol}")
        return tol

    @property
    def subsample(self):
        return self._number("subsample", int, minimum=1)

    @property
    def cloud_format(self):
        return self.get("format")

    @property
    def epochs(self):
        return self._number("epochs", int, minimum=1)

    @property
    def batch(self):
        return self._number("batch", int, minimum=1)

    @property
    def lr(self):
        lr = self._number("lr", float)
        if lr <= 0:
            raise ConfigError(f"lr must be > 0, got {lr}")
        return lr

    @property
    def seed(self):
        return self._number("seed", int)

    @property
    def folds(self):
        return self._number("folds", int, minimum=2)

    @property
    def stratified(self):
        return bool(self.get("stratified"))

    def model_config(self, **changes) -> ModelConfig:
        values = dict(self.section("model"))
        values.update(changes)
        values["seed"] = self.seed
        try:
            return ModelConfig.from_dict(values)
        except TypeError as e:
            raise ConfigError(f"bad model config: {e}")

    def to_dict(self):
        out = {section: dict(values) for section, values in self.data.items()}
        if self.run_name:
            out["run_name"] = self.run_name
        return out


def worker_threads():
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads
