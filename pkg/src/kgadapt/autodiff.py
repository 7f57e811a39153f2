"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every operation builds a node on a dynamic tape; :meth:`Tensor.backward`
walks the tape in reverse topological order and accumulates gradients into
every tensor that requires them. Only the operations the model needs are
provided, but each one has an exact gradient (checked by :func:`grad_check`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NumericError",
    "Tensor",
    "tensor",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "matmul",
    "concat",
    "sigmoid",
    "relu",
    "hinge",
    "gather",
    "segment_sum",
    "segment_max",
    "maxpool_rows",
    "replace_rows",
    "mean_stack",
    "total",
    "l2_norm",
    "cosine",
    "cosine_rows",
    "reshape",
    "tile_rows",
    "grad_check",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes for the named operation."""

    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op


class NumericError(ArithmeticError):
    """A non-finite value reached a checked boundary."""


_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Backpropagate from this tensor. A scalar output gets seed 1."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward", f"seed required for non-scalar output {self.shape}")
            seed = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return gather(self, idx)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    """Create a leaf tensor; rejects NaN and infinities."""
    t = Tensor(data, requires_grad=requires_grad, name=name)
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in tensor {name or '<anonymous>'}")
    return t


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    """Elementwise quotient with broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _result(a.data * c, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D or 2-D operands (matrix-vector included)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError("matmul", f"operands must be 1-D or 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # vector @ matrix
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _result(A @ B, (a, b), backward)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat", "nothing to concatenate")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, parts, backward)


SIGMOID_CLAMP = 36.0


def sigmoid(a: Tensor) -> Tensor:
    # clamped so the float result stays strictly inside (0, 1); 1/(1+e^-36) < 1
    x = np.clip(a.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0.0), (a,), backward)


def hinge(a: Tensor) -> Tensor:
    """max(x, 0); identical to :func:`relu` but named for scalar losses."""
    return relu(a)


def gather(a: Tensor, idx) -> Tensor:
    """Select rows (first axis) by integer index array or scalar index."""
    idx_arr = np.asarray(idx)
    n = a.shape[0] if a.data.ndim else 0
    if idx_arr.size and (idx_arr.max() >= n or idx_arr.min() < -n):
        raise ShapeError("gather", f"index out of range for leading dimension {n}")
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx_arr, g)
        return (out,)

    return _result(a.data[idx_arr], (a,), backward)


def segment_sum(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segments``."""
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != a.shape[0]:
        raise ShapeError("segment_sum", f"{len(segments)} segment ids for {a.shape[0]} rows")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, segments, a.data)

    def backward(g):
        return (g[segments],)

    return _result(out, (a,), backward)


def segment_max(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Column-wise max of the rows in each segment; empty segments give 0.

    The gradient flows to the first row attaining the maximum.
    """
    if a.data.ndim != 2:
        raise ShapeError("segment_max", f"expected a 2-D operand, got {a.shape}")
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != a.shape[0]:
        raise ShapeError("segment_max", f"{len(segments)} segment ids for {a.shape[0]} rows")
    d = a.shape[1]
    out = np.zeros((num_segments, d))
    argmax = np.full((num_segments, d), -1, dtype=np.int64)
    for s in range(num_segments):
        rows = np.flatnonzero(segments == s)
        if len(rows) == 0:
            continue
        block = a.data[rows]
        pos = block.argmax(axis=0)
        argmax[s] = rows[pos]
        out[s] = block[pos, np.arange(d)]
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape)
        cols = np.broadcast_to(np.arange(d), argmax.shape)
        valid = argmax >= 0
        np.add.at(grad, (argmax[valid], cols[valid]), g[valid])
        return (grad,)

    return _result(out, (a,), backward)


def maxpool_rows(a: Tensor) -> Tensor:
    """Column-wise max over all rows, e.g. {[1,5],[3,2]} -> [3,5]."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise ShapeError("maxpool_rows", f"expected a non-empty 2-D operand, got {a.shape}")
    return gather(segment_max(a, np.zeros(a.shape[0], dtype=np.int64), 1), 0)


def replace_rows(a: Tensor, idx, rows) -> Tensor:
    """Return a copy of ``a`` with rows ``idx`` overwritten by ``rows``."""
    rows = _as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ShapeError("replace_rows", "row indices must be distinct")
    if rows.shape != (len(idx),) + a.shape[1:]:
        raise ShapeError("replace_rows", f"replacement {rows.shape} for {len(idx)} rows of {a.shape}")
    out = a.data.copy()
    out[idx] = rows.data

    def backward(g):
        ga = g.copy()
        ga[idx] = 0.0
        return ga, g[idx]

    return _result(out, (a, rows), backward)


def mean_stack(parts: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of equal-shape tensors, independent of their order.

    Values are sorted per coordinate before summation, so any permutation of
    ``parts`` yields a bitwise-identical result.
    """
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("mean_stack", "mean over an empty list")
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise ShapeError("mean_stack", "operands differ in shape")
    k = len(parts)
    stacked = np.sort(np.stack([p.data for p in parts]), axis=0)
    out = stacked.sum(axis=0) / k

    def backward(g):
        return tuple(g / k for _ in parts)

    return _result(out, parts, backward)


def total(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(a.data.sum()), (a,), backward)


def l2_norm(a: Tensor) -> Tensor:
    n = float(np.sqrt(np.sum(a.data * a.data)))

    def backward(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / n,)

    return _result(np.asarray(n), (a,), backward)


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two equal-length vectors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError("cosine", f"need equal-length vectors, got {a.shape} and {b.shape}")
    x, y = a.data, b.data
    nx = float(np.sqrt(x @ x))
    ny = float(np.sqrt(y @ y))
    if nx == 0.0 or ny == 0.0:
        raise NumericError("cosine: zero-norm operand, score undefined")
    c = float(x @ y) / (nx * ny)

    def backward(g):
        ga = g * (y / (nx * ny) - c * x / (nx * nx))
        gb = g * (x / (nx * ny) - c * y / (ny * ny))
        return ga, gb

    return _result(np.asarray(c), (a, b), backward)


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity of two equal-shape matrices."""
    if a.data.ndim != 2 or a.shape != b.shape:
        raise ShapeError("cosine_rows", f"need equal-shape matrices, got {a.shape} and {b.shape}")
    x, y = a.data, b.data
    nx = np.sqrt(np.einsum("ij,ij->i", x, x))
    ny = np.sqrt(np.einsum("ij,ij->i", y, y))
    if np.any(nx == 0.0) or np.any(ny == 0.0):
        raise NumericError("cosine_rows: zero-norm operand, score undefined")
    dot = np.einsum("ij,ij->i", x, y)
    c = dot / (nx * ny)

    def backward(g):
        g = g[:, None]
        nxc, nyc, cc = nx[:, None], ny[:, None], c[:, None]
        ga = g * (y / (nxc * nyc) - cc * x / (nxc * nxc))
        gb = g * (x / (nxc * nyc) - cc * y / (nyc * nyc))
        return ga, gb

    return _result(c, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    orig = a.shape

    def backward(g):
        return (g.reshape(orig),)

    return _result(out, (a,), backward)


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of vector ``v`` as the rows of a matrix."""
    if v.data.ndim != 1:
        raise ShapeError("tile_rows", f"expected a vector, got {v.shape}")
    return gather(reshape(v, (1, v.shape[0])), np.zeros(n, dtype=np.int64))


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-6,
) -> float:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` takes no arguments and reads the current values of ``params``;
    each coordinate of each parameter is perturbed in place by ``eps``
    (scaled by ``max(1, |x|)``). Returns the max over coordinates of
    ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise NumericError("grad_check: function must return a finite scalar")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, g_ad in zip(params, analytic):
            flat = p.data.reshape(-1)
            g_flat = g_ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                h = eps * max(1.0, abs(orig))
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("grad_check: non-finite function value")
                g_fd = (up - down) / (2 * h)
                worst = max(worst, abs(g_flat[i] - g_fd) / max(1.0, abs(g_fd)))
    return worst
