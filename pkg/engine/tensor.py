# engine/tensor.py
#
# Dense 2-D float64 tensors with a reverse-mode tape. Every op builds a new
# Tensor holding its parents and a closure that pushes the output gradient
# back into them. Graphs are rebuilt on every forward pass.

import numpy as np

from engine.errors import NumericError, ShapeError

NORM_EPS = 1e-12


class Tensor:
    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        data = np.asarray(values, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got {data.ndim}-D input to {op}")
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values produced by {op}")

        self.values = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = parents
        self._backward_fn = backward_fn

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.values.shape

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self):
        return self.values.copy()

    def zero_grad(self):
        self.grad = None

    def accumulate(self, grad):
        if not self.requires_grad:
            return
        if grad.shape != self.values.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self, grad=None):
        if not self.requires_grad:
            return
        if grad is None:
            if self.values.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a 1x1 tensor, got {self.shape}")
            grad = np.ones_like(self.values)

        order = _topological_order(self)
        seeds = {id(node): None for node in order}
        seeds[id(self)] = np.asarray(grad, dtype=np.float64).reshape(self.shape)

        # Interior gradients live in `seeds` so that leaves are the only
        # tensors whose .grad accumulates across backward calls.
        for node in reversed(order):
            g = seeds[id(node)]
            if g is None:
                continue
            if node._backward_fn is None:
                node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                seeds[key] = pg if seeds[key] is None else seeds[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return add(self, negate(_wrap(other)))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _result(values, parents, backward_fn, op):
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(
        values,
        requires_grad=requires_grad,
        parents=tuple(parents) if requires_grad else (),
        backward_fn=backward_fn if requires_grad else None,
        op=op,
    )


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------- CORE OPS ----------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def broadcast_add(col: Tensor, row: Tensor) -> Tensor:
    if col.cols != 1 or row.rows != 1 or col.rows != row.cols:
        raise ShapeError(f"broadcast_add: expected n x 1 and 1 x n, got {col.shape} and {row.shape}")
    return _result(
        col.values + row.values,
        (col, row),
        lambda g: (g.sum(axis=1, keepdims=True), g.sum(axis=0, keepdims=True)),
        "broadcast_add",
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _result(a.values + b.values, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def negate(a: Tensor) -> Tensor:
    return _result(-a.values, (a,), lambda g: (-g,), "negate")


def scale(a: Tensor, s: float) -> Tensor:
    return _result(a.values * s, (a,), lambda g: (g * s,), "scale")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _result(a.values + s, (a,), lambda g: (g,), "add_scalar")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out = 1.0 / a.values
    return _result(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.values)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,), "relu")


def row_sum(a: Tensor) -> Tensor:
    cols = a.cols
    return _result(
        a.values.sum(axis=1, keepdims=True),
        (a,),
        lambda g: (np.repeat(g, cols, axis=1),),
        "row_sum",
    )


def transpose(a: Tensor) -> Tensor:
    return _result(a.values.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: nothing to concatenate")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row mismatch {parts[0].shape} vs {p.shape}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.values for p in parts], axis=1), parts, backward, "concat_cols")


def take_rows(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(idx) and (idx.min() < 0 or idx.max() >= a.rows):
        raise ShapeError(f"take_rows: index out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.values[idx].reshape(len(idx), a.cols), (a,), backward, "take_rows")


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    return take_rows(a, np.arange(start, stop))


def pad_rows(a: Tensor, total: int) -> Tensor:
    """Append zero rows until the tensor has `total` rows."""
    if total < a.rows:
        raise ShapeError(f"pad_rows: cannot pad {a.shape} down to {total} rows")
    n = a.rows
    out = np.zeros((total, a.cols))
    out[:n] = a.values
    return _result(out, (a,), lambda g: (g[:n],), "pad_rows")


def reshape(a: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != a.values.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as ({rows}, {cols})")
    shape = a.shape
    return _result(a.values.reshape(rows, cols), (a,), lambda g: (g.reshape(shape),), "reshape")


def diag(col: Tensor) -> Tensor:
    if col.cols != 1:
        raise ShapeError(f"diag: expected an n x 1 column, got {col.shape}")
    return _result(
        np.diagflat(col.values),
        (col,),
        lambda g: (np.diag(g).reshape(-1, 1).copy(),),
        "diag",
    )


def max_pool_rows(a: Tensor, size: int = 2) -> Tensor:
    """Max over consecutive non-overlapping row windows, per column (stride == size)."""
    out_rows = a.rows // size
    if out_rows < 1:
        raise ShapeError(f"max_pool_rows: {a.rows} rows is fewer than the window {size}")
    windows = a.values[:out_rows * size].reshape(out_rows, size, a.cols)
    arg = windows.argmax(axis=1)
    src_rows = arg + np.arange(out_rows)[:, None] * size
    cols = np.broadcast_to(np.arange(a.cols), src_rows.shape)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (src_rows, cols), g)
        return (out,)

    return _result(windows.max(axis=1), (a,), backward, "max_pool_rows")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.values * keep, (a,), lambda g: (g * keep,), "dropout")


# ---------------- COMPOSITE OPS ----------------

def l2_rowpair_norms(h: Tensor, eps: float = NORM_EPS) -> Tensor:
    """out[w, q] = sqrt(sum_c (h[w, c] - h[q, c])**2 + eps)."""
    hv = h.values
    diff = hv[:, None, :] - hv[None, :, :]
    out = np.sqrt(np.einsum("wqc,wqc->wq", diff, diff) + eps)

    def backward(g):
        # d out[w,q] / d h[w] = diff[w,q] / out[w,q]; h[q] receives the negation.
        coef = g / out
        coef_sym = coef + coef.T
        grad = coef_sym.sum(axis=1, keepdims=True) * hv - coef_sym @ hv
        return (grad,)

    return _result(out, (h,), backward, "l2_rowpair_norms")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is None:
        return out
    return add(out, matmul(Tensor(np.ones((x.rows, 1))), b))


def softmax(logits: Tensor) -> np.ndarray:
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    if logits.rows != 1 or logits.cols < 2:
        raise ShapeError(f"softmax_cross_entropy expects 1 x C logits with C >= 2, got {logits.shape}")
    if not 0 <= label < logits.cols:
        raise ValueError(f"label {label} out of range for {logits.cols} classes")

    z = logits.values - logits.values.max()
    log_norm = np.log(np.exp(z).sum())
    loss = log_norm - z[0, label]
    probs = np.exp(z - log_norm)
    one_hot = np.zeros_like(probs)
    one_hot[0, label] = 1.0

    return _result(
        np.array([[loss]]),
        (logits,),
        lambda g: (g[0, 0] * (probs - one_hot),),
        "softmax_cross_entropy",
    )
