# engine/gnn.py

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from engine import tensor as T
from engine.errors import ConfigError, DegeneracyError, ShapeError
from engine.seeding import substream
from engine.tensor import Tensor

EDGE_SCHEMES = ("default_one", "exp_l2", "exp_l2_squared", "gauss_kernel", "gaussian_input")
NORMALIZATIONS = ("row", "column", "naive_symmetric", "symmetric")
ADDON_UPDATES = ("matmul", "elementwise")
ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}


@dataclass
class ModelConfig:
    layer_dims: list[int] = field(default_factory=lambda: [32, 32, 32, 1])
    z: int = 30
    edge_scheme: str = "exp_l2"
    # Scheme for the input layer only; None means "same as edge_scheme".
    input_edge_scheme: str | None = None
    normalization: str = "row"
    addon_enabled: bool = True
    addon_update: str = "matmul"
    addon_bias: bool = True
    activation: str = "tanh"
    gauss_sigma: float = 1.0
    conv1_filters: int = 16
    pool_size: int = 2
    conv2_filters: int = 32
    conv2_kernel: int = 5
    dense_units: int = 128
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.validate()

    def validate(self):
        if len(self.layer_dims) < 1 or any(d < 1 for d in self.layer_dims):
            raise ConfigError(f"layer_dims must be positive widths, got {self.layer_dims}")
        if self.z < 1:
            raise ConfigError(f"z must be >= 1, got {self.z}")
        for name, value, allowed in (
            ("edge_scheme", self.edge_scheme, EDGE_SCHEMES),
            ("normalization", self.normalization, NORMALIZATIONS),
            ("addon_update", self.addon_update, ADDON_UPDATES),
            ("activation", self.activation, tuple(ACTIVATIONS)),
        ):
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if self.input_edge_scheme is not None and self.input_edge_scheme not in EDGE_SCHEMES:
            raise ConfigError(f"input_edge_scheme must be one of {EDGE_SCHEMES}, got {self.input_edge_scheme!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gauss_sigma <= 0:
            raise ConfigError(f"gauss_sigma must be > 0, got {self.gauss_sigma}")
        if self.conv2_length < 1:
            raise ConfigError(
                f"z={self.z} is too small: pooled length {self.z // self.pool_size} "
                f"is shorter than the conv2 kernel {self.conv2_kernel}"
            )

    @property
    def total_width(self):
        return sum(self.layer_dims)

    @property
    def conv2_length(self):
        return self.z // self.pool_size - self.conv2_kernel + 1

    @property
    def first_edge_scheme(self):
        return self.input_edge_scheme or self.edge_scheme

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class GraphSample:
    node_features: np.ndarray
    base_adjacency: np.ndarray
    label: int
    name: str | None = None

    def __post_init__(self):
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        if self.node_features.ndim == 1:
            self.node_features = self.node_features.reshape(-1, 1)
        self.base_adjacency = np.asarray(self.base_adjacency, dtype=np.float64)
        n = len(self.node_features)
        if n < 1:
            raise ValueError("graph sample needs at least one node")
        if self.base_adjacency.shape != (n, n):
            raise ShapeError(f"adjacency shape {self.base_adjacency.shape} does not match {n} nodes")
        if np.any(np.diag(self.base_adjacency) != 0):
            raise ValueError("base adjacency must have a zero diagonal; self-loops are added by the model")
        self.label = int(self.label)

    @property
    def num_nodes(self):
        return len(self.node_features)

    @property
    def num_features(self):
        return self.node_features.shape[1]


@dataclass(frozen=True)
class EdgeStats:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"EdgeStats sigma must be > 0, got {self.sigma}")


# ---------------- PARAMETERS ----------------

def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ModelParams:
    """Named float64 arrays for every trainable weight of the classifier."""

    def __init__(self, arrays: dict[str, np.ndarray], config: ModelConfig, in_features: int, num_classes: int):
        self.arrays = arrays
        self.config = config
        self.in_features = int(in_features)
        self.num_classes = int(num_classes)
        self.check_shapes()

    @staticmethod
    def expected_shapes(config: ModelConfig, in_features: int, num_classes: int) -> dict[str, tuple[int, int]]:
        dims = [in_features] + list(config.layer_dims)
        shapes = {}
        for k in range(len(config.layer_dims)):
            shapes[f"conv{k}.W"] = (dims[k], dims[k + 1])
        if config.addon_enabled:
            # Add-on layer k sits between convolutions k-1 and k and reads H^k.
            for k in range(1, len(config.layer_dims)):
                for lin in ("L1", "L2"):
                    shapes[f"addon{k}.{lin}.W"] = (dims[k], 1)
                    if config.addon_bias:
                        shapes[f"addon{k}.{lin}.b"] = (1, 1)

        F = config.total_width
        c1, c2 = config.conv1_filters, config.conv2_filters
        shapes["readout.conv1.W"] = (F, c1)
        shapes["readout.conv1.b"] = (1, c1)
        shapes["readout.conv2.W"] = (config.conv2_kernel * c1, c2)
        shapes["readout.conv2.b"] = (1, c2)
        shapes["readout.dense.W"] = (config.conv2_length * c2, config.dense_units)
        shapes["readout.dense.b"] = (1, config.dense_units)
        shapes["readout.out.W"] = (config.dense_units, num_classes)
        shapes["readout.out.b"] = (1, num_classes)
        return shapes

    @classmethod
    def initialize(cls, config: ModelConfig, in_features: int, num_classes: int):
        if num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {num_classes}")
        rng = substream(config.seed, "init")
        arrays = {}
        for name, (rows, cols) in cls.expected_shapes(config, in_features, num_classes).items():
            if name.endswith(".b"):
                arrays[name] = np.zeros((rows, cols))
            else:
                arrays[name] = _glorot(rng, rows, cols)
        return cls(arrays, config, in_features, num_classes)

    def check_shapes(self):
        expected = self.expected_shapes(self.config, self.in_features, self.num_classes)
        missing = sorted(set(expected) - set(self.arrays))
        extra = sorted(set(self.arrays) - set(expected))
        if missing or extra:
            raise ShapeError(f"parameter set does not match config (missing={missing}, unexpected={extra})")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {self.arrays[name].shape}")

    def leaves(self, requires_grad=True) -> dict[str, Tensor]:
        return {name: Tensor(a, requires_grad=requires_grad, op=name) for name, a in self.arrays.items()}

    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def count_by_group(self) -> dict[str, int]:
        groups = {}
        for name, a in self.arrays.items():
            group = "addon" if name.startswith("addon") else "backbone"
            groups[group] = groups.get(group, 0) + int(a.size)
        return groups

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, self.config, self.in_features, self.num_classes)


# ---------------- LAYERS ----------------

def edge_features(h: Tensor, scheme: str, stats: EdgeStats | None = None, sigma: float = 1.0) -> Tensor:
    """Dense n x n edge weights computed from the current node representations, diagonal included."""
    n = h.rows
    if scheme == "default_one":
        return Tensor(np.ones((n, n)))

    dist = T.l2_rowpair_norms(h)
    if scheme == "exp_l2":
        return T.exp(dist)
    if scheme == "exp_l2_squared":
        return T.exp(T.mul(dist, dist))
    if scheme == "gauss_kernel":
        return T.exp(T.scale(T.mul(dist, dist), -1.0 / (sigma * sigma)))
    if scheme == "gaussian_input":
        if stats is None:
            raise ValueError("gaussian_input edge scheme needs dataset EdgeStats (mu, sigma)")
        shifted = T.add_scalar(dist, -stats.mu)
        expo = T.scale(T.mul(shifted, shifted), -1.0 / (4.0 * stats.sigma * stats.sigma))
        return T.scale(T.exp(expo), 1.0 / (math.sqrt(2.0 * math.pi) * stats.sigma))
    raise ConfigError(f"unknown edge scheme {scheme!r}")


def normalize_adjacency(a: Tensor, mode: str = "row") -> Tensor:
    if np.any(a.values < 0):
        raise ValueError("adjacency entries must be non-negative")
    degree = T.row_sum(a)
    zero = np.flatnonzero(degree.values[:, 0] <= 0)
    if len(zero):
        raise DegeneracyError(f"node {int(zero[0])} has zero degree", node_index=int(zero[0]))

    if mode == "row":
        return T.matmul(T.diag(T.reciprocal(degree)), a)
    if mode == "column":
        return T.matmul(a, T.diag(T.reciprocal(degree)))
    if mode == "naive_symmetric":
        d_inv = T.diag(T.reciprocal(degree))
        return T.matmul(T.matmul(d_inv, a), d_inv)
    if mode == "symmetric":
        d_inv_sqrt = T.diag(T.reciprocal(T.sqrt(degree)))
        return T.matmul(T.matmul(d_inv_sqrt, a), d_inv_sqrt)
    raise ConfigError(f"unknown normalization {mode!r}")


def graph_conv(h: Tensor, a_norm: Tensor, w: Tensor, activation: str = "tanh") -> Tensor:
    return ACTIVATIONS[activation](T.matmul(T.matmul(a_norm, h), w))


def addon_layer(h: Tensor, a_norm: Tensor, l1, l2, update: str = "matmul") -> Tensor:
    """
    Update matrix H' = L1(H) + L2(H)^T (broadcast), applied to the normalized
    adjacency as H' x A_N (matmul) or H' * A_N (elementwise).
    l1 and l2 are (W, b) pairs; b may be None.
    """
    col = T.linear(h, *l1)
    row = T.transpose(T.linear(h, *l2))
    update_matrix = T.broadcast_add(col, row)
    if update == "matmul":
        return T.matmul(update_matrix, a_norm)
    if update == "elementwise":
        return T.mul(update_matrix, a_norm)
    raise ConfigError(f"unknown add-on update {update!r}")


def sort_order(h_concat: np.ndarray) -> np.ndarray:
    """Descending by last column, then by the next-to-last column, then ascending original index."""
    n, F = h_concat.shape
    keys = [np.arange(n), -h_concat[:, -1]]
    if F > 1:
        keys.insert(1, -h_concat[:, -2])
    return np.lexsort(keys)


def sort_pooling(h_concat: Tensor, z: int) -> Tensor:
    order = sort_order(h_concat.values)[:z]
    kept = T.take_rows(h_concat, order)
    if kept.rows < z:
        kept = T.pad_rows(kept, z)
    return kept


def readout(pooled: Tensor, w: dict[str, Tensor], config: ModelConfig, train_mode=False, rng=None) -> Tensor:
    # conv1: kernel = stride = row width, so it acts on each pooled row independently.
    x = T.relu(T.linear(pooled, w["readout.conv1.W"], w["readout.conv1.b"]))
    x = T.max_pool_rows(x, config.pool_size)

    k = config.conv2_kernel
    length = x.rows - k + 1
    if length < 1:
        raise ConfigError(f"pooled length {x.rows} is shorter than the conv2 kernel {k}")
    windows = T.concat_cols([T.slice_rows(x, j, j + length) for j in range(k)])
    x = T.relu(T.linear(windows, w["readout.conv2.W"], w["readout.conv2.b"]))

    x = T.reshape(x, 1, x.rows * x.cols)
    x = T.relu(T.linear(x, w["readout.dense.W"], w["readout.dense.b"]))
    if train_mode and config.dropout > 0:
        if rng is None:
            raise ValueError("training-mode forward needs a dropout rng")
        x = T.dropout(x, config.dropout, rng)
    return T.linear(x, w["readout.out.W"], w["readout.out.b"])


def _edge_mask(sample: GraphSample) -> np.ndarray:
    return sample.base_adjacency + np.eye(sample.num_nodes)


def forward(
    sample: GraphSample,
    params,
    config: ModelConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    stats: EdgeStats | None = None,
) -> Tensor:
    """Logits (1 x C) for one graph. `params` is a ModelParams or a dict of leaf Tensors."""
    w = params.leaves(requires_grad=False) if isinstance(params, ModelParams) else params

    mask = _edge_mask(sample)
    complete = bool(np.all(mask == 1))
    h = Tensor(sample.node_features)
    hidden = []

    for k in range(len(config.layer_dims)):
        scheme = config.first_edge_scheme if k == 0 else config.edge_scheme
        if scheme == "default_one":
            a = Tensor(mask)
        else:
            a = edge_features(h, scheme, stats=stats, sigma=config.gauss_sigma)
            if not complete:
                a = T.mul(Tensor(mask), a)
        a_norm = normalize_adjacency(a, config.normalization)

        if k >= 1 and config.addon_enabled:
            l1 = (w[f"addon{k}.L1.W"], w.get(f"addon{k}.L1.b"))
            l2 = (w[f"addon{k}.L2.W"], w.get(f"addon{k}.L2.b"))
            a_norm = addon_layer(h, a_norm, l1, l2, config.addon_update)

        h = graph_conv(h, a_norm, w[f"conv{k}.W"], config.activation)
        hidden.append(h)

    pooled = sort_pooling(T.concat_cols(hidden), config.z)
    return readout(pooled, w, config, train_mode=train_mode, rng=rng)


def predict(sample: GraphSample, params: ModelParams, stats: EdgeStats | None = None) -> int:
    logits = forward(sample, params, params.config, stats=stats)
    return int(np.argmax(logits.values[0]))
