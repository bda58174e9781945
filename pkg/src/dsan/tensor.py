"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node holding its parents and a backward rule that
maps the output gradient to one gradient per parent. ``Tensor.backward``
walks the graph in reverse topological order.

Padding must be bit-invisible, and BLAS rounding depends on matrix shape.
So under the default "exact" backend, ``matmul`` runs an unoptimised
``einsum``, whose per-entry result does not depend on the number of rows.
``ordered_matmul`` and ``ordered_sum`` accumulate strictly left to right,
so their results also ignore extra columns and trailing zero terms. Attention
uses those two wherever the sequence length is summed over or spans the
output. ``set_matmul_backend("blas")`` trades all of this for speed.
"""
from __future__ import annotations

import contextlib
import functools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

# Additive logit for "minus infinity"; exp() underflows to exactly 0 without NaNs.
SENTINEL = -1e9
# Logits at or below this are treated as masked by the fully-masked-row rule.
NEG_INF_THRESHOLD = -1e8
LAYER_NORM_EPS = 1e-6


class DimensionError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class ContractError(RuntimeError):
    pass


_local = threading.local()
_sum_all = np.add.reduce
_sum_last = np.add.reduce
_MATMUL_BACKENDS = ("exact", "blas")
_matmul_backend = "exact"
_stochastic_calls = 0


def _grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (evaluation, finite differences)."""
    prev = _grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def set_matmul_backend(name: str) -> str:
    """Select the forward matmul kernel; returns the previous one."""
    global _matmul_backend
    if name not in _MATMUL_BACKENDS:
        raise ValueError(f"unknown matmul backend {name!r}; expected one of {_MATMUL_BACKENDS}")
    prev, _matmul_backend = _matmul_backend, name
    return prev


def get_matmul_backend() -> str:
    return _matmul_backend


def stochastic_call_count() -> int:
    return _stochastic_calls


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise ContractError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward() without an explicit grad needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        pending = {id(self): grad}
        for node in reversed(topological_order(self)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its parents."""
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {where}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    # a sum is non-finite iff some entry is (short of ~1e308 overflow)
    if not math.isfinite(_sum_all(data, axis=None)) and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by {op}")
    out = object.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    if getattr(_local, "grad_enabled", True):
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = tuple(parents)
                out._backward = backward
                break
    return out


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, float):
        return _scalar(x)
    return Tensor(x)


@functools.lru_cache(maxsize=64)
def _scalar(x: float) -> Tensor:
    # constants are never differentiated, so sharing one node is safe
    return Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- binary ops

def _binary(fn, a: Tensor, b: Tensor, op: str) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    out = _binary(np.add, a, b, "add")
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    out = _binary(np.subtract, a, b, "sub")
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(_binary(np.multiply, a, b, "mul"), (a, b), backward, "mul")


def _check_matmul(a: Tensor, b: Tensor) -> None:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")


def _matmul_backward(a: Tensor, b: Tensor) -> Callable:
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return backward


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    _check_matmul(a, b)
    ad, bd = a.data, b.data
    try:
        if _matmul_backend == "exact":
            spec = "...ik,kj->...ij" if bd.ndim == 2 else "...ik,...kj->...ij"
            out = np.einsum(spec, ad, bd, optimize=False)
        else:
            out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    return _make(out, (a, b), _matmul_backward(a, b), "matmul")


def ordered_matmul(a, b) -> Tensor:
    """``matmul`` whose entries are summed left to right over the inner index.

    Each entry then depends only on its own row of ``a`` and column of ``b``,
    not on the matrix sizes, and appending zero terms leaves it unchanged.
    """
    a, b = as_tensor(a), as_tensor(b)
    _check_matmul(a, b)
    ad, bd = a.data, b.data
    try:
        if _matmul_backend == "exact":
            out = ad[..., :, 0:1] * bd[..., 0:1, :]
            for t in range(1, ad.shape[-1]):
                out = out + ad[..., :, t:t + 1] * bd[..., t:t + 1, :]
        else:
            out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    return _make(out, (a, b), _matmul_backward(a, b), "ordered_matmul")


# ----------------------------------------------------------------- unary ops

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def elu(a) -> Tensor:
    """ELU with alpha = 1."""
    a = as_tensor(a)
    pos = a.data > 0
    out = np.where(pos, a.data, np.expm1(np.minimum(a.data, 0.0)))
    return _make(out, (a,), lambda g: (g * np.where(pos, 1.0, out + 1.0),), "elu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log_clamped(a, floor: float = 1e-12) -> tuple[Tensor, int]:
    """Natural log with inputs clamped below at ``floor``; also returns the clamp count."""
    a = as_tensor(a)
    clamped = a.data <= floor
    safe = np.where(clamped, floor, a.data)
    out = np.log(safe)
    return _make(out, (a,), lambda g: (np.where(clamped, 0.0, g / safe),), "log"), int(clamped.sum())


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul,
    "neg": neg, "abs": absolute, "relu": relu, "elu": elu,
    "sigmoid": sigmoid, "tanh": tanh, "exp": exp,
}
_BINARY = {"add", "sub", "mul"}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Dispatch a pointwise op by name (binary ops need ``b``)."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"{kind} takes one operand")
    return fn(a)


# ----------------------------------------------------------- shape / reduce

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) % a.ndim for ax in axes)
    inv = tuple(sorted(range(len(axes)), key=axes.__getitem__))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def ordered_sum(a, axis: int) -> Tensor:
    """Sum over one axis strictly left to right; trailing zeros never change it."""
    a = as_tensor(a)
    src = a.shape
    ax = axis % a.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), src).copy(),)

    return _make(np.cumsum(a.data, axis=ax).take(-1, axis=ax), (a,), backward, "ordered_sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(count))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in ts]}: {exc}") from None
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def backward(g):
        z = np.zeros(src)
        np.add.at(z, idx, g)
        return (z,)

    return _make(np.array(a.data[idx]), (a,), backward, "getitem")


def take_along(a, indices: np.ndarray, axis: int) -> Tensor:
    """``np.take_along_axis`` with a scatter-add backward."""
    a = as_tensor(a)
    src = a.shape
    indices = np.asarray(indices)

    def backward(g):
        z = np.zeros(src)
        full = np.indices(g.shape, sparse=True)
        full = list(full)
        full[axis % len(src)] = indices
        np.add.at(z, tuple(np.broadcast_arrays(*full)), g)
        return (z,)

    return _make(np.take_along_axis(a.data, indices, axis=axis), (a,), backward, "take_along")


def masked_max(a, valid: np.ndarray, axis: int) -> tuple[Tensor, np.ndarray]:
    """Max over ``axis`` restricted to entries where ``valid`` is true.

    Ties go to the lowest index. Returns the reduced tensor and the argmax.
    """
    a = as_tensor(a)
    valid = np.broadcast_to(np.asarray(valid, dtype=bool), a.shape)
    if not valid.any(axis=axis).all():
        raise ContractError("masked_max: a slice has no valid entries")
    filled = np.where(valid, a.data, -np.inf)
    idx = np.expand_dims(np.argmax(filled, axis=axis), axis)
    out = take_along(a, idx, axis)
    out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out, np.squeeze(idx, axis=axis)


# ------------------------------------------------------------ fused layers

def _seq_sum(x: np.ndarray, axis: int) -> np.ndarray:
    # left-to-right sum: trailing zeros never change the rounding
    return np.take(np.cumsum(x, axis=axis), [-1], axis=axis)


def softmax(x, axis: int = -1, neg_inf_threshold: float = NEG_INF_THRESHOLD) -> Tensor:
    """Stable softmax; a slice whose entries are all masked maps to zeros."""
    x = as_tensor(x)
    d = x.data
    dead = np.all(d <= neg_inf_threshold, axis=axis, keepdims=True)
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    y = np.where(dead, 0.0, e / _seq_sum(e, axis))

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def softmax_rows(x, neg_inf_threshold: float = NEG_INF_THRESHOLD) -> Tensor:
    return softmax(x, -1, neg_inf_threshold)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a feature axis of at least 2, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs features {d}")
    r = 1.0 / d
    xd = x.data
    xc = xd - _sum_last(xd, axis=-1, keepdims=True) * r
    inv = (_sum_last(xc * xc, axis=-1, keepdims=True) * r + eps) ** -0.5
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.sum(axis=-1, keepdims=True) * r
                    - xhat * ((dxhat * xhat).sum(axis=-1, keepdims=True) * r))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def dropout(x, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or when ``p == 0``."""
    global _stochastic_calls
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if not 0.0 < p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    _stochastic_calls += 1
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------- gradient checking

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-4,
               floor: float = 1e-6) -> float:
    """Worst relative error between backprop and central differences.

    ``f`` rebuilds a scalar loss from ``params`` on every call. The per-entry
    error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps exactly-zero
    gradients from dividing finite-difference rounding noise by ~0.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-6, 1e-4]")
    params = list(params)
    for p in params:
        p.grad = None

    before = stochastic_call_count()
    out = f()
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    with no_grad():
        again = f()
    if stochastic_call_count() != before or again.item() != out.item():
        raise ContractError("grad_check: function is not deterministic (dropout enabled?)")
    if out.requires_grad:
        out.backward()

    worst = 0.0
    with no_grad():
        for p in params:
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad
            flat = p.data.reshape(-1)
            ana = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                err = abs(ana[i] - num) / max(abs(ana[i]), abs(num), floor)
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
