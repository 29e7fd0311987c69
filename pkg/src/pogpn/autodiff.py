"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every primitive applied to a tensor attached to it.
Parameters are attached with :meth:`Tape.watch`; values created without a tape
are plain immutable constants.  :func:`backward` walks the tape once in reverse
and returns the gradient of a scalar root with respect to every watched leaf.

    >>> tape = Tape()
    >>> x = tape.watch([1.0, 2.0])
    >>> y = (0.5 * x * x).sum()
    >>> backward(tape, y)[x].data
    array([1., 2.])
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

logger = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-6
MAX_JITTER = 1e-2


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class CholeskyError(np.linalg.LinAlgError):
    """Raised when a matrix is not positive definite even after maximal jitter."""


class ShapeError(ValueError):
    """Raised when primitive inputs have non-conforming shapes."""


@dataclass
class _Record:
    op: str
    inputs: tuple[int | None, ...]
    output: int
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications.  Single-threaded."""

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self.leaves: list[Tensor] = []
        self._num_nodes = 0

    def __len__(self) -> int:
        return len(self.records)

    def _new_node(self) -> int:
        self._num_nodes += 1
        return self._num_nodes - 1

    def watch(self, value: Any, name: str | None = None) -> Tensor:
        """Attach ``value`` to this tape as a differentiable leaf."""
        data = value.data if isinstance(value, Tensor) else value
        leaf = Tensor(data, name=name)
        leaf.tape = self
        leaf.node = self._new_node()
        self.leaves.append(leaf)
        return leaf


class Tensor:
    """Immutable float64 array, optionally attached to a :class:`Tape`."""

    __slots__ = ("data", "tape", "node", "name")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data: Any, name: str | None = None) -> None:
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        arr.setflags(write=False)
        self.data = arr
        self.tape: Tape | None = None
        self.node: int | None = None
        self.name = name

    def __repr__(self) -> str:
        tag = "" if self.tape is None else ", taped"
        return f"Tensor({self.data!r}{tag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.data.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return self.__mul__(other)

    def __truediv__(self, other: Any) -> Tensor:
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, other)

    def __rmatmul__(self, other: Any) -> Tensor:
        return matmul(other, self)

    def __getitem__(self, index: Any) -> Tensor:
        return slice_(self, index)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------

_PRIMITIVES: dict[str, Callable[..., tuple[np.ndarray, Callable]]] = {}
_GRADIENT_FAULTS: dict[str, float] = {}


def _primitive(name: str):
    def register(fn):
        _PRIMITIVES[name] = fn
        return fn

    return register


def primitive_names() -> list[str]:
    return list(_PRIMITIVES)


@contextlib.contextmanager
def inject_gradient_fault(op: str, factor: float = 1.5) -> Iterator[None]:
    """Scale the backward pass of ``op`` by ``factor`` (test hook)."""
    if op not in _PRIMITIVES:
        raise KeyError(op)
    _GRADIENT_FAULTS[op] = factor
    try:
        yield
    finally:
        _GRADIENT_FAULTS.pop(op, None)


def apply(op: str, *inputs: Any, **params: Any) -> Tensor:
    """Evaluate primitive ``op``; record it if any input lives on a tape."""
    try:
        fn = _PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    tensors = [as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError(f"{op}: inputs belong to different tapes")
            tape = t.tape
    out, vjp = fn(*(t.data for t in tensors), **params)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    result = Tensor.__new__(Tensor)
    out = np.asarray(out, dtype=np.float64)
    out.setflags(write=False)
    result.data = out
    result.name = None
    result.tape = None
    result.node = None
    if tape is not None:
        result.tape = tape
        result.node = tape._new_node()
        tape.records.append(
            _Record(op, tuple(t.node if t.tape is tape else None for t in tensors), result.node, vjp)
        )
    return result


def backward(tape: Tape, root: Tensor) -> dict[Tensor, Tensor]:
    """Gradient of scalar ``root`` with respect to every leaf watched on ``tape``."""
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if root.tape is not tape:
        raise ValueError("backward root was not produced on this tape")
    grads: list[np.ndarray | None] = [None] * tape._num_nodes
    grads[root.node] = np.ones(root.shape)
    for rec in reversed(tape.records):
        if rec.output > root.node:
            continue
        g = grads[rec.output]
        if g is None:
            continue
        input_grads = rec.vjp(g)
        factor = _GRADIENT_FAULTS.get(rec.op)
        for idx, gi in zip(rec.inputs, input_grads):
            if idx is None or gi is None:
                continue
            if factor is not None:
                gi = gi * factor
            grads[idx] = gi if grads[idx] is None else grads[idx] + gi
    result = {}
    for leaf in tape.leaves:
        g = grads[leaf.node]
        result[leaf] = Tensor(np.zeros(leaf.shape) if g is None else np.reshape(g, leaf.shape))
    return result


def value_and_grad(
    fn: Callable[..., Tensor], *args: Any
) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``fn(*args)`` on a fresh tape and return the value and gradients."""
    tape = Tape()
    leaves = [tape.watch(a) for a in args]
    out = fn(*leaves)
    grads = backward(tape, out)
    return out.item(), [grads[leaf].data for leaf in leaves]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


@_primitive("add")
def _add(a, b):
    _broadcast_check("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@_primitive("sub")
def _sub(a, b):
    _broadcast_check("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@_primitive("mul")
def _mul(a, b):
    _broadcast_check("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@_primitive("div")
def _div(a, b):
    _broadcast_check("div", a, b)
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


@_primitive("scalar_mul")
def _scalar_mul(a, *, c: float):
    return c * a, lambda g: (c * g,)


@_primitive("neg")
def _neg(a):
    return -a, lambda g: (-g,)


@_primitive("exp")
def _exp(a):
    out = np.exp(a)
    return out, lambda g: (g * out,)


@_primitive("log")
def _log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a)
    return out, lambda g: (g / a,)


@_primitive("softplus")
def _softplus(a):
    return np.logaddexp(0.0, a), lambda g: (g * expit(a),)


@_primitive("square")
def _square(a):
    return a * a, lambda g: (2.0 * a * g,)


@_primitive("sqrt")
def _sqrt(a):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a)
    return out, lambda g: (g / (2.0 * out),)


@_primitive("clamp_min")
def _clamp_min(a, *, lo: float):
    keep = a > lo
    return np.where(keep, a, lo), lambda g: (g * keep,)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


@_primitive("matmul")
def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not conform") from None

    def vjp(g):
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return a @ b, vjp


@_primitive("transpose")
def _transpose(a, *, axes: tuple[int, ...] | None = None):
    if axes is None:
        if a.ndim < 2:
            raise ShapeError("transpose needs at least two dimensions")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return np.transpose(a, axes), lambda g: (np.transpose(g, inverse),)


@_primitive("reshape")
def _reshape(a, *, shape: tuple[int, ...]):
    try:
        out = np.reshape(a, shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return out, lambda g: (np.reshape(g, a.shape),)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else axis
        g = np.expand_dims(g, tuple(ax % len(shape) for ax in axes))
    return np.broadcast_to(g, shape)


@_primitive("sum")
def _sum(a, *, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims), lambda g: (
        _expand_reduced(g, a.shape, axis, keepdims).copy(),
    )


@_primitive("mean")
def _mean(a, *, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    count = a.size // max(out.size, 1) if a.size else 1
    return out, lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)


@_primitive("slice")
def _slice(a, *, index):
    try:
        out = a[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc}") from None

    def vjp(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return np.array(out), vjp


@_primitive("concat")
def _concat(*arrays, axis: int = -1):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=axis))


@_primitive("broadcast")
def _broadcast(a, *, shape: tuple[int, ...]):
    try:
        out = np.broadcast_to(a, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {shape}") from None
    return out.copy(), lambda g: (_unbroadcast(g, a.shape),)


@_primitive("logsumexp")
def _logsumexp(a, *, axis: int = -1, keepdims: bool = False):
    m = np.max(a, axis=axis, keepdims=True)
    out_k = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(a - out_k),)

    return out, vjp


@_primitive("softmax")
def _softmax(a, *, axis: int = -1):
    e = np.exp(a - np.max(a, axis=axis, keepdims=True))
    s = e / np.sum(e, axis=axis, keepdims=True)
    return s, lambda g: (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def _jitter_scale(A: np.ndarray) -> tuple[float, bool]:
    scale = float(np.mean(np.diag(A)))
    if np.isfinite(scale) and scale > 0:
        return scale, True
    return 1.0, False


def _cholesky_single(A: np.ndarray, base_jitter: float, name: str | None):
    n = A.shape[-1]
    scale, from_diag = _jitter_scale(A)
    j = base_jitter * scale
    eye = np.eye(n)
    while True:
        try:
            return np.linalg.cholesky(A + j * eye), j / scale if from_diag else 0.0, j
        except np.linalg.LinAlgError:
            pass
        j = j * 10.0 if j > 0 else 1e-8 * scale
        if j > MAX_JITTER * scale * (1 + 1e-9):
            where = f" for node {name!r}" if name else ""
            raise CholeskyError(
                f"matrix{where} not positive definite after jitter {MAX_JITTER * scale:.3g}"
            )
        logger.debug("cholesky%s: escalating jitter to %.3g", f" ({name})" if name else "", j)


@_primitive("cholesky")
def _cholesky(A, *, base_jitter: float = DEFAULT_JITTER, name: str | None = None):
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"cholesky: expected square matrices, got {A.shape}")
    n = A.shape[-1]
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    batch = A.shape[:-2]
    L = np.empty_like(sym)
    coef = np.empty(batch)
    jit = np.empty(batch)
    for idx in np.ndindex(*batch):
        L[idx], coef[idx], jit[idx] = _cholesky_single(sym[idx], base_jitter, name)
    eye = np.eye(n)

    def vjp(gL):
        gL = np.tril(gL)
        P = np.swapaxes(L, -1, -2) @ gL
        P = np.tril(P) - 0.5 * (eye * P)
        G = np.empty_like(P)
        for idx in np.ndindex(*batch):
            Li = L[idx]
            X = solve_triangular(Li, P[idx], lower=True, trans="T")
            G[idx] = solve_triangular(Li, X.T, lower=True, trans="T").T
        G = 0.5 * (G + np.swapaxes(G, -1, -2))
        # jitter = coef * mean(diag A) contributes to every diagonal entry
        tr = np.trace(G, axis1=-2, axis2=-1)
        G = G + (coef * tr / n)[..., None, None] * eye
        return (G,)

    return L, vjp


def _trisolve_2d(L, B, lower, trans):
    m = L.shape[-1]
    lead = B.shape[:-2]
    k = B.shape[-1]
    flat = np.moveaxis(B, -2, 0).reshape(m, -1)
    X = solve_triangular(L, flat, lower=lower, trans="T" if trans else "N", check_finite=False)
    return np.moveaxis(X.reshape((m,) + lead + (k,)), 0, -2)


def _trisolve(L, B, lower, trans):
    if L.ndim == 2:
        return _trisolve_2d(L, B, lower, trans)
    batch = np.broadcast_shapes(L.shape[:-2], B.shape[:-2])
    lb = len(L.shape[:-2])
    Lb = np.broadcast_to(L, batch[len(batch) - lb:] + L.shape[-2:])
    Bb = np.broadcast_to(B, batch + B.shape[-2:])
    out = np.empty(Bb.shape)
    for idx in np.ndindex(*Lb.shape[:-2]):
        sel = (Ellipsis,) + idx + (slice(None), slice(None))
        out[sel] = _trisolve_2d(Lb[idx], Bb[sel], lower, trans)
    return out


@_primitive("triangular_solve")
def _triangular_solve(L, B, *, lower: bool = True, trans: bool = False):
    """Solve op(L) X = B with op(L) = L or L^T; L may carry batch dimensions."""
    if L.ndim < 2 or L.shape[-1] != L.shape[-2] or B.ndim < 2 or B.shape[-2] != L.shape[-1]:
        raise ShapeError(f"triangular_solve: shapes {L.shape} and {B.shape} do not conform")
    try:
        np.broadcast_shapes(L.shape[:-2], B.shape[:-2])
    except ValueError:
        raise ShapeError(f"triangular_solve: batch shapes {L.shape} and {B.shape}") from None
    X = _trisolve(L, B, lower, trans)

    def vjp(gX):
        gB = _trisolve(L, gX, lower, not trans)
        gT = -(gB @ np.swapaxes(X, -1, -2))
        if trans:
            gT = np.swapaxes(gT, -1, -2)
        gT = np.tril(gT) if lower else np.triu(gT)
        return _unbroadcast(gT, L.shape), _unbroadcast(gB, B.shape)

    return X, vjp


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    return apply("add", a, b)


def sub(a, b) -> Tensor:
    return apply("sub", a, b)


def mul(a, b) -> Tensor:
    return apply("mul", a, b)


def div(a, b) -> Tensor:
    return apply("div", a, b)


def scalar_mul(a, c: float) -> Tensor:
    return apply("scalar_mul", a, c=float(c))


def neg(a) -> Tensor:
    return apply("neg", a)


def exp(a) -> Tensor:
    return apply("exp", a)


def log(a) -> Tensor:
    return apply("log", a)


def softplus(a) -> Tensor:
    return apply("softplus", a)


def square(a) -> Tensor:
    return apply("square", a)


def sqrt(a) -> Tensor:
    return apply("sqrt", a)


def clamp_min(a, lo: float) -> Tensor:
    return apply("clamp_min", a, lo=float(lo))


def matmul(a, b) -> Tensor:
    return apply("matmul", a, b)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    return apply("transpose", a, axes=None if axes is None else tuple(axes))


def reshape(a, shape: Sequence[int]) -> Tensor:
    return apply("reshape", a, shape=tuple(shape))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    return apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return apply("mean", a, axis=axis, keepdims=keepdims)


def slice_(a, index) -> Tensor:
    return apply("slice", a, index=index)


def concat(tensors: Sequence[Any], axis: int = -1) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def broadcast(a, shape: Sequence[int]) -> Tensor:
    return apply("broadcast", a, shape=tuple(shape))


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    return apply("logsumexp", a, axis=axis, keepdims=keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    return apply("softmax", a, axis=axis)


def log_softmax(a, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def cholesky(A, base_jitter: float = DEFAULT_JITTER, name: str | None = None) -> Tensor:
    return apply("cholesky", A, base_jitter=float(base_jitter), name=name)


def cholesky_with_jitter(
    A, base_jitter: float = DEFAULT_JITTER, name: str | None = None
) -> tuple[Tensor, float]:
    """Lower Cholesky factor of ``(A + A^T)/2 + j I`` and the accepted jitter ``j``.

    ``j`` starts at ``base_jitter * mean(diag A)`` and grows tenfold per failed
    attempt, up to ``1e-2 * mean(diag A)``.  A non-positive mean diagonal
    falls back to unit scale.
    """
    A = as_tensor(A)
    if A.ndim != 2:
        L = cholesky(A, base_jitter, name)
        return L, float("nan")
    sym = 0.5 * (A.data + A.data.T)
    _, _, j = _cholesky_single(sym, base_jitter, name)
    return cholesky(A, base_jitter, name), j


def triangular_solve(L, B, lower: bool = True, trans: bool = False) -> Tensor:
    return apply("triangular_solve", L, B, lower=bool(lower), trans=bool(trans))


def diagonal(A) -> Tensor:
    """Diagonal of the trailing two axes."""
    n = A.shape[-1]
    idx = np.arange(n)
    return slice_(A, (Ellipsis, idx, idx))


def logdet_cholesky(A, base_jitter: float = DEFAULT_JITTER) -> Tensor:
    L = cholesky(A, base_jitter)
    return scalar_mul(sum_(log(diagonal(L))), 2.0)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def finite_difference_check(
    fn: Callable[[Tensor], Tensor], x: Any, step: float = 1e-5
) -> float:
    """Max relative error between autodiff and central finite differences.

    Error per coordinate is ``|ad - fd| / (|fd| + 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    _, (ad,) = value_and_grad(fn, x0)
    flat = x0.ravel()
    fd = np.empty(flat.size)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        f_plus = fn(Tensor(plus.reshape(x0.shape))).item()
        f_minus = fn(Tensor(minus.reshape(x0.shape))).item()
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("finite_difference_check: non-finite function value")
        fd[i] = (f_plus - f_minus) / (2.0 * step)
    err = np.abs(ad.ravel() - fd) / (np.abs(fd) + 1e-8)
    return float(err.max()) if err.size else 0.0
