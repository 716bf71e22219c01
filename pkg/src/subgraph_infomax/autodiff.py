"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value on the tape is a 2-D matrix; scalars are 1x1 and vectors are
single-row or single-column matrices.  Operations record a backward closure
on the output node, and ``backward`` walks the tape in reverse topological
order, accumulating gradients additively into every node that requires them.

A tape is single-threaded.  Independent tapes (one per training run) may be
used concurrently because nodes share no mutable state across tapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

__all__ = [
    "Tensor",
    "as_tensor",
    "backward",
    "matmul",
    "add",
    "mul",
    "div",
    "scale",
    "neg",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "sqrt",
    "log_sigmoid",
    "softmax_rows",
    "logsumexp_rows",
    "mean_rows",
    "sum_rows",
    "row_sums",
    "sum_all",
    "mean_all",
    "concat_cols",
    "concat_rows",
    "gather_rows",
    "segment_sum",
    "segment_mean",
    "transpose",
    "dropout",
    "clip_min",
    "finite_diff_check",
]


def _as_matrix(values) -> Array:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"expected a scalar, vector, or matrix, got shape {arr.shape}")
    return arr


class Tensor:
    """A tape node: a float64 matrix, an optional gradient slot, parent links."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_rule: Callable[[Array], None] | None = None,
    ):
        self.values = _as_matrix(values)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_rule

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        """Stop-gradient marker: same values, no parents, no gradient flow."""
        return Tensor(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: Array, parents: tuple[Tensor, ...], backward_rule) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, parents=parents, backward_rule=backward_rule)
    return Tensor(values)


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, int]) -> Array:
    if g.shape == shape:
        return g
    for axis in (0, 1):
        if shape[axis] == 1 and g.shape[axis] > 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = a.values @ b.values

    def bwd(g: Array) -> None:
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    return _make(out, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.values + b.values

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    out = a.values * b.values

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g * b.values, a.shape))
        _accum(b, _unbroadcast(g * a.values, b.shape))

    return _make(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.values / b.values

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g / b.values, a.shape))
        _accum(b, _unbroadcast(-g * a.values / (b.values * b.values), b.shape))

    return _make(out, (a, b), bwd)


def scale(a: Tensor, alpha: float) -> Tensor:
    a = as_tensor(a)
    alpha = float(alpha)
    out = a.values * alpha

    def bwd(g: Array) -> None:
        _accum(a, g * alpha)

    return _make(out, (a,), bwd)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    out = np.where(mask, a.values, 0.0)

    def bwd(g: Array) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def _sigmoid(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.values)

    def bwd(g: Array) -> None:
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.values)

    def bwd(g: Array) -> None:
        _accum(a, g / a.values)

    return _make(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)

    def bwd(g: Array) -> None:
        _accum(a, g * out)

    return _make(out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.values)

    def bwd(g: Array) -> None:
        _accum(a, g * 0.5 / out)

    return _make(out, (a,), bwd)


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigma(x)) = -softplus(-x), stable for large |x|."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.values)

    def bwd(g: Array) -> None:
        _accum(a, g * _sigmoid(-a.values))

    return _make(out, (a,), bwd)


def softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g: Array) -> None:
        inner = (g * out).sum(axis=1, keepdims=True)
        _accum(a, out * (g - inner))

    return _make(out, (a,), bwd)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp, shape (n, 1)."""
    a = as_tensor(a)
    m = a.values.max(axis=1, keepdims=True)
    e = np.exp(a.values - m)
    out = m + np.log(e.sum(axis=1, keepdims=True))

    def bwd(g: Array) -> None:
        _accum(a, g * (e / e.sum(axis=1, keepdims=True)))

    return _make(out, (a,), bwd)


def mean_rows(a: Tensor) -> Tensor:
    """Average the rows together, shape (1, m)."""
    a = as_tensor(a)
    n = a.shape[0]
    out = a.values.mean(axis=0, keepdims=True)

    def bwd(g: Array) -> None:
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _make(out, (a,), bwd)


def sum_rows(a: Tensor) -> Tensor:
    """Add the rows together, shape (1, m)."""
    a = as_tensor(a)
    out = a.values.sum(axis=0, keepdims=True)

    def bwd(g: Array) -> None:
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bwd)


def row_sums(a: Tensor) -> Tensor:
    """Per-row totals, shape (n, 1)."""
    a = as_tensor(a)
    out = a.values.sum(axis=1, keepdims=True)

    def bwd(g: Array) -> None:
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.array([[a.values.sum()]])

    def bwd(g: Array) -> None:
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    size = a.values.size
    out = np.array([[a.values.sum() / size]])

    def bwd(g: Array) -> None:
        _accum(a, np.broadcast_to(g / size, a.shape))

    return _make(out, (a,), bwd)


def concat_cols(*parts: Tensor) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ValueError(
                f"concat_cols: row counts differ: {[p.shape for p in parts]}"
            )
    out = np.hstack([p.values for p in parts])
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def bwd(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[:, lo:hi])

    return _make(out, parts, bwd)


def concat_rows(*parts: Tensor) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ValueError(
                f"concat_rows: column counts differ: {[p.shape for p in parts]}"
            )
    out = np.vstack([p.values for p in parts])
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def bwd(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi, :])

    return _make(out, parts, bwd)


def gather_rows(a: Tensor, indices) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(
            f"gather_rows: index out of range for {a.shape[0]} rows: "
            f"[{idx.min()}, {idx.max()}]"
        )
    out = a.values[idx]

    def bwd(g: Array) -> None:
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(out, (a,), bwd)


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64).reshape(-1)
    if seg.size != a.shape[0]:
        raise ValueError(
            f"segment_sum: {seg.size} segment ids for {a.shape[0]} rows"
        )
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError(f"segment_sum: segment id out of range [0, {num_segments})")
    out = np.zeros((num_segments, a.shape[1]))
    np.add.at(out, seg, a.values)

    def bwd(g: Array) -> None:
        _accum(a, g[seg])

    return _make(out, (a,), bwd)


def segment_mean(a: Tensor, segments, num_segments: int) -> Tensor:
    """Per-segment row averages; empty segments yield zero rows."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.int64).reshape(-1)
    if seg.size != a.shape[0]:
        raise ValueError(
            f"segment_mean: {seg.size} segment ids for {a.shape[0]} rows"
        )
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError(f"segment_mean: segment id out of range [0, {num_segments})")
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    out = np.zeros((num_segments, a.shape[1]))
    np.add.at(out, seg, a.values)
    out /= denom

    def bwd(g: Array) -> None:
        _accum(a, (g / denom)[seg])

    return _make(out, (a,), bwd)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = a.values.T.copy()

    def bwd(g: Array) -> None:
        _accum(a, g.T)

    return _make(out, (a,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep mass by rescaling with 1/(1-p); p=0 is the identity."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    out = a.values * mask

    def bwd(g: Array) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def clip_min(a: Tensor, floor: float) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.values, floor)
    mask = a.values > floor

    def bwd(g: Array) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), bwd)


def backward(loss: Tensor) -> None:
    """Populate gradients of everything reachable from a scalar loss."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_diff_check(
    scalar_fn: Callable[[], Tensor],
    params: Iterable[Tensor] | Sequence[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Central-difference gradient check.

    ``scalar_fn`` must be deterministic (dropout disabled, any rng re-seeded
    inside the closure).  Returns the worst relative error over all
    coordinates of ``params``:
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = scalar_fn()
    backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.values)
        for p in params
    ]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = scalar_fn().item()
            flat[i] = orig - epsilon
            f_minus = scalar_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = gflat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
