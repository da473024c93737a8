"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded on it, in
execution order, together with a closure computing their local vector-Jacobian
product.  :func:`backward` walks the tape once in reverse and returns the
gradient of a scalar loss with respect to every leaf tensor that took part.

Broadcasting is limited to leading dimensions: an operand may only be
broadcast against another if its shape is a suffix of the other's shape
(a bias against a batch, a scalar against anything).  Everything else must be
reshaped explicitly.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from contextlib import contextmanager
from typing import NamedTuple

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "ShapeError",
    "NonFiniteError",
    "GradCheck",
    "backward",
    "no_tape",
    "grad_check",
    "grad_check_params",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "exp",
    "log",
    "square",
    "softmax",
    "log_softmax",
    "logsumexp",
    "logaddexp",
    "sum",
    "mean",
    "reverse_cumsum",
    "reshape",
    "broadcast_to",
    "clip",
    "gaussian_sample",
    "gaussian_kl",
]


class ShapeError(ValueError):
    """Operands of an op have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinite values."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"non-finite values produced by {op}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


_TAPES: list[Tape] = []
_CHECK_FINITE = True


def set_finite_check(enabled: bool) -> bool:
    """Toggle the per-op finiteness check; returns the previous setting."""
    global _CHECK_FINITE
    prev, _CHECK_FINITE = _CHECK_FINITE, bool(enabled)
    return prev


class Tensor:
    """A dense float64 array that can take part in recorded computations."""

    __slots__ = ("data", "requires_grad", "name", "_tape", "_index")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self._tape: Tape | None = None
        self._index = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, data={self.data!r})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None) -> Tensor:
        return sum(self, axis)

    def mean(self, axis=None) -> Tensor:
        return mean(self, axis)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data, name: str | None = None) -> Tensor:
    """A leaf tensor whose gradient is tracked."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


class _Node(NamedTuple):
    op: str
    parents: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


class Tape:
    """Ordered record of the ops executed while the tape is active.

    Nodes are appended in execution order, so every node's parents precede
    it.  Leaves are registered the first time a recorded op consumes them.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, int] = {}
        self._leaf_tensors: list[Tensor] = []

    def __enter__(self) -> Tape:
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaf_tensors)

    def _leaf_index(self, t: Tensor) -> int:
        idx = self._leaves.get(id(t))
        if idx is None:
            idx = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None))
            self._leaves[id(t)] = idx
            self._leaf_tensors.append(t)
        return idx

    def record(self, op: str, out: Tensor, parents: Sequence[Tensor], rule) -> None:
        idx = []
        live = False
        for p in parents:
            if p._tape is self:
                i = p._index
            elif p.requires_grad:
                i = self._leaf_index(p)
            else:
                i = -1
            live = live or i >= 0
            idx.append(i)
        if not live:
            return
        out._tape = self
        out._index = len(self.nodes)
        self.nodes.append(_Node(op, tuple(idx), rule))


@contextmanager
def no_tape():
    """Suspend recording on every active tape (for inference-only passes)."""
    saved = _TAPES[:]
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES[:] = saved


class Gradients(Mapping):
    """Leaf tensor -> gradient array, keyed by tensor identity."""

    def __init__(self, pairs: Iterable[tuple[Tensor, np.ndarray]]):
        self._grads = {id(t): (t, g) for t, g in pairs}

    def __getitem__(self, t: Tensor) -> np.ndarray:
        try:
            return self._grads[id(t)][1]
        except KeyError:
            raise KeyError(f"no gradient recorded for {t!r}") from None

    def get(self, t, default=None):
        entry = self._grads.get(id(t))
        return default if entry is None else entry[1]

    def __contains__(self, t) -> bool:
        return id(t) in self._grads

    def __iter__(self):
        return (t for t, _ in self._grads.values())

    def __len__(self) -> int:
        return len(self._grads)


def backward(loss: Tensor) -> Gradients:
    """Gradients of a scalar ``loss`` with respect to every leaf on its tape.

    Leaves that were recorded but do not influence the loss receive zeros.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not computed on an active tape")
    nodes = tape.nodes
    grads: list[np.ndarray | None] = [None] * len(nodes)
    grads[loss._index] = np.ones_like(loss.data)
    for i in range(loss._index, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        if node.backward is None:
            continue
        for j, pg in zip(node.parents, node.backward(g)):
            if j < 0 or pg is None:
                continue
            prev = grads[j]
            grads[j] = pg if prev is None else prev + pg
    pairs = []
    for t in tape._leaf_tensors:
        g = grads[tape._leaves[id(t)]]
        pairs.append((t, np.zeros_like(t.data) if g is None else g))
    return Gradients(pairs)


# --------------------------------------------------------------------------
# op machinery


def _emit(op: str, data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    if _CHECK_FINITE and not np.isfinite(data).all():
        shapes = ", ".join(str(p.shape) for p in parents)
        raise NonFiniteError(op, f"input shapes {shapes}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.name = None
    out._tape = None
    out._index = -1
    if _TAPES:
        _TAPES[-1].record(op, out, parents, rule)
    return out


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.reshape((-1,) + shape).sum(axis=0)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        gb = g / bd
        return _unbroadcast(gb, ad.shape), _unbroadcast(-gb * out, bd.shape)

    return _emit("div", out, (a, b), rule)


def neg(a) -> Tensor:
    a = _t(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product of 1-D/2-D operands."""
    a, b = _t(a), _t(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    a2 = ad if ad.ndim == 2 else ad[None, :]
    b2 = bd if bd.ndim == 2 else bd[:, None]
    out = ad @ bd

    def rule(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        return (g2 @ b2.T).reshape(ad.shape), (a2.T @ g2).reshape(bd.shape)

    return _emit("matmul", out, (a, b), rule)


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _expit(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _t(a)
    s = _expit(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)), finite for any finite input."""
    a = _t(a)
    x = a.data
    return _emit("log_sigmoid", -np.logaddexp(0.0, -x), (a,),
                 lambda g: (g * _expit(-x),))


def softplus(a) -> Tensor:
    a = _t(a)
    x = a.data
    return _emit("softplus", np.logaddexp(0.0, x), (a,), lambda g: (g * _expit(x),))


def exp(a) -> Tensor:
    a = _t(a)
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _t(a)
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    return _emit("log", out, (a,), lambda g: (g / x,))


def square(a) -> Tensor:
    a = _t(a)
    x = a.data
    return _emit("square", x * x, (a,), lambda g: (2.0 * g * x,))


def _lse(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


def softmax(a, temperature: float = 1.0) -> Tensor:
    """Softmax of ``a / temperature`` over the last axis."""
    a = _t(a)
    if temperature <= 0:
        raise ValueError(f"softmax: temperature must be positive, got {temperature}")
    z = a.data / temperature
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return ((g - (g * s).sum(axis=-1, keepdims=True)) * s / temperature,)

    return _emit("softmax", s, (a,), rule)


def log_softmax(a, temperature: float = 1.0) -> Tensor:
    """Log-softmax of ``a / temperature`` over the last axis."""
    a = _t(a)
    if temperature <= 0:
        raise ValueError(f"log_softmax: temperature must be positive, got {temperature}")
    z = a.data / temperature
    out = z - _lse(z)[..., None]

    def rule(g):
        return ((g - np.exp(out) * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _emit("log_softmax", out, (a,), rule)


def logsumexp(a) -> Tensor:
    """log(sum(exp(a))) over the last axis."""
    a = _t(a)
    x = a.data
    out = _lse(x)
    return _emit("logsumexp", out, (a,),
                 lambda g: (g[..., None] * np.exp(x - out[..., None]),))


def logaddexp(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("logaddexp", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = np.logaddexp(ad, bd)

    def rule(g):
        return (_unbroadcast(g * np.exp(ad - out), ad.shape),
                _unbroadcast(g * np.exp(bd - out), bd.shape))

    return _emit("logaddexp", out, (a, b), rule)


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = _t(a)
    shape = a.shape
    if axis is None:
        return _emit("sum", np.asarray(a.data.sum()), (a,),
                     lambda g: (np.broadcast_to(g, shape),))
    axis = axis % a.ndim
    return _emit("sum", a.data.sum(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape),))


def mean(a, axis=None) -> Tensor:
    a = _t(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reverse_cumsum(a) -> Tensor:
    """out[..., i] = sum_{j >= i} a[..., j] over the last axis."""
    a = _t(a)
    out = np.flip(np.cumsum(np.flip(a.data, -1), axis=-1), -1)
    return _emit("reverse_cumsum", out, (a,), lambda g: (np.cumsum(g, axis=-1),))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {old} to {shape}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape) -> Tensor:
    """Repeat ``a`` along new leading dimensions."""
    a = _t(a)
    shape = tuple(shape)
    _broadcast_shape("broadcast_to", shape, a.shape)
    old = a.shape
    out = np.broadcast_to(a.data, shape).copy()
    return _emit("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, old),))


def clip(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient is zero where the clamp is active."""
    a = _t(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = out == x
    return _emit("clip", out, (a,), lambda g: (g * inside,))


# --------------------------------------------------------------------------
# fused ops for the weight posterior; each is checked against its
# composed form in the test-suite


def gaussian_sample(mean_: Tensor, rho: Tensor, eps: np.ndarray) -> Tensor:
    """mean + softplus(rho) * eps as a single recorded op."""
    mean_, rho = _t(mean_), _t(rho)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mean_.shape or rho.shape != mean_.shape:
        raise ShapeError(
            f"gaussian_sample: shapes mean {mean_.shape}, rho {rho.shape}, noise {eps.shape}")
    r = rho.data
    out = mean_.data + np.logaddexp(0.0, r) * eps
    return _emit("gaussian_sample", out, (mean_, rho),
                 lambda g: (g, g * eps * _expit(r)))


def gaussian_kl(mean_: Tensor, rho: Tensor, sigma0: float) -> Tensor:
    """sum KL(N(mean, softplus(rho)^2) || N(0, sigma0^2)) as a single op."""
    mean_, rho = _t(mean_), _t(rho)
    if mean_.shape != rho.shape:
        raise ShapeError(f"gaussian_kl: shapes {mean_.shape} and {rho.shape}")
    m, r = mean_.data, rho.data
    s = np.logaddexp(0.0, r)
    v0 = sigma0 * sigma0
    out = np.asarray((np.log(sigma0) - np.log(s) + (s * s + m * m) / (2.0 * v0) - 0.5).sum())

    def rule(g):
        return g * m / v0, g * (s / v0 - 1.0 / s) * _expit(r)

    return _emit("gaussian_kl", out, (mean_, rho), rule)


# --------------------------------------------------------------------------
# finite-difference checking


class GradCheck(NamedTuple):
    error: float
    nan_count: int


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> GradCheck:
    """Compare the tape gradient of scalar ``f`` at ``point`` with central differences.

    Returns the max over coordinates of ``|analytic - fd| / max(1, |analytic|)``
    and, separately, the number of coordinates where ``f`` could not be
    evaluated (those are excluded from the maximum).
    """
    x0 = np.array(point, dtype=np.float64)
    x = parameter(x0)
    with Tape():
        y = f(x)
        analytic = backward(y)[x]
    return _fd_compare(lambda: f(Tensor(x.data)).item(), [x], [analytic], h)


def grad_check_params(loss: Callable[[], Tensor], params: Sequence[Tensor],
                      h: float = 1e-5) -> GradCheck:
    """Like :func:`grad_check` but perturbs a list of parameter tensors in place.

    ``loss`` must be a deterministic closure over ``params``.
    """
    with Tape():
        y = loss()
        grads = backward(y)
        analytic = [grads.get(p, np.zeros_like(p.data)) for p in params]
    return _fd_compare(lambda: loss().item(), params, analytic, h)


def _fd_compare(evaluate, params, analytic, h) -> GradCheck:
    worst = 0.0
    bad = 0
    prev = set_finite_check(False)
    try:
        for p, ga in zip(params, analytic):
            base = p.data.copy()
            flat = p.data.reshape(-1)
            ga = np.asarray(ga).reshape(-1)
            for i in range(flat.size):
                flat[i] = base.flat[i] + h
                fp = evaluate()
                flat[i] = base.flat[i] - h
                fm = evaluate()
                flat[i] = base.flat[i]
                fd = (fp - fm) / (2.0 * h)
                if not np.isfinite(fd):
                    bad += 1
                    continue
                worst = max(worst, float(_rel_error(ga[i], fd)))
    finally:
        set_finite_check(prev)
    return GradCheck(worst, bad)
