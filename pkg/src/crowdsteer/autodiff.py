"""Small reverse-mode autodiff over float64 numpy arrays.

Operations record themselves on the active :class:`Tape` (if any); outside a
tape they run as plain forward computations. ``Tape.backward`` replays the
record in exact reverse order and accumulates gradients additively, so
fan-out is handled by summation.

Convolutions use "same" zero padding with output length ``ceil(L / stride)``;
when the total padding is odd the extra zero goes at the end.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

_ACTIVE: list["Tape"] = []
# When a list, relu appends its activation mask (used to spot kink crossings).
_MASKS: list | None = None


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape})"

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
        return mul(self, -1.0)

    def __truediv__(self, other):
        return mul(self, 1.0 / other if not isinstance(other, Tensor) else reciprocal(other))


def parameter(data, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations for one forward pass."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, parents, fn in reversed(self.records):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.array(g, dtype=np.float64, copy=True)
                else:
                    p.grad = p.grad + g


def _record(data, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    needs = bool(_ACTIVE) and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _ACTIVE[-1].records.append((out, parents, backward))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _record(out, (a,), lambda g: (-g * out * out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    if _MASKS is not None:
        _MASKS.append(mask)
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "linear": lambda x: x}


# ---------------------------------------------------------------- reductions / shape

def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record(np.sum(a.data), (a,), lambda g: (np.broadcast_to(g, shape),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _record(np.mean(a.data), (a,), lambda g: (np.broadcast_to(g / n, shape),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    shape = a.shape
    return _record(a.data.sum(axis=axis), (a,),
                   lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def column(a: Tensor, j: int) -> Tensor:
    """``a[:, j]`` for a 2-D tensor."""
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[:, j] = g
        return (out,)

    return _record(a.data[:, j], (a,), back)


def stack_columns(cols: list[Tensor]) -> Tensor:
    data = np.stack([c.data for c in cols], axis=1)
    return _record(data, tuple(cols), lambda g: tuple(g[:, j] for j in range(len(cols))))


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _record(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def hinge(a: Tensor) -> Tensor:
    """``max(0, a)`` elementwise; identical to relu but named for loss code."""
    return relu(a)


# ---------------------------------------------------------------- layers

def dense(x: Tensor, w: Tensor, b: Tensor, activation: str = "linear", name: str = "dense") -> Tensor:
    """Affine map ``x @ w + b`` then activation. ``x`` is (N, in) or (in,)."""
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"{name}: input {x.shape} incompatible with weights {w.shape} / bias {b.shape}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"{name}: unknown activation {activation!r}")
    xd, wd = x.data, w.data
    squeeze = xd.ndim == 1
    x2 = xd[None, :] if squeeze else xd

    def back(g):
        g2 = g[None, :] if squeeze else g
        gx = g2 @ wd.T
        return (gx[0] if squeeze else gx, x2.T @ g2, g2.sum(axis=0))

    out = x2 @ wd + b.data
    affine = _record(out[0] if squeeze else out, (x, w, b), back)
    return ACTIVATIONS[activation](affine)


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output length and (before, after) zero padding for ceil-same convolution."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, name: str = "conv1d") -> Tensor:
    """Cross-correlation of (N, C_in, L) or (C_in, L) with kernels (C_out, C_in, k)."""
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    co, ci, k = w.shape
    if xd.ndim != 3 or xd.shape[1] != ci:
        raise ShapeError(f"{name}: expected {ci} input channels, got input shape {x.shape}")
    if k % 2 == 0 or stride < 1:
        raise ShapeError(f"{name}: kernel size must be odd and stride >= 1 (k={k}, stride={stride})")
    out4, back4 = _conv2d_forward(xd[:, :, None, :], w.data[:, :, None, :], b.data, 1, stride, name)

    def back(g):
        g4 = (g[None] if squeeze else g)[:, :, None, :]
        gx, gw, gb = back4(g4)
        gx = gx[:, :, 0, :]
        return (gx[0] if squeeze else gx, gw[:, :, 0, :], gb)

    out = out4[:, :, 0, :]
    return _record(out[0] if squeeze else out, (x, w, b), back)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, name: str = "conv2d") -> Tensor:
    """Cross-correlation of (N, C_in, H, W) or (C_in, H, W) with kernels (C_out, C_in, kh, kw)."""
    xd = x.data
    squeeze = xd.ndim == 3
    if squeeze:
        xd = xd[None]
    co, ci, kh, kw = w.shape
    if xd.ndim != 4 or xd.shape[1] != ci:
        raise ShapeError(f"{name}: expected {ci} input channels, got input shape {x.shape}")
    if kh % 2 == 0 or kw % 2 == 0 or stride < 1:
        raise ShapeError(f"{name}: kernel size must be odd and stride >= 1")
    out, back4 = _conv2d_forward(xd, w.data, b.data, stride, stride, name)

    def back(g):
        gx, gw, gb = back4(g[None] if squeeze else g)
        return (gx[0] if squeeze else gx, gw, gb)

    return _record(out[0] if squeeze else out, (x, w, b), back)


def _conv2d_forward(x, w, b, sh, sw, name):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    oh, pt, pb = same_padding(h, kh, sh)
    ow, pl, pr = same_padding(wd, kw, sw)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = np.empty((ci, kh, kw, n, oh, ow))
    for i in range(kh):
        for j in range(kw):
            win = xp[:, :, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw]
            cols[:, i, j] = win.transpose(1, 0, 2, 3)
    ck = ci * kh * kw
    cols = cols.reshape(ck, n * oh * ow)
    w2 = w.reshape(co, ck)
    out = (w2 @ cols).reshape(co, n, oh, ow).transpose(1, 0, 2, 3) + b[None, :, None, None]

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(co, n * oh * ow)
        gw = (g2 @ cols.T).reshape(w.shape)
        gb = g2.sum(axis=1)
        gcols = (w2.T @ g2).reshape(ci, kh, kw, n, oh, ow)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw] += \
                    gcols[:, i, j].transpose(1, 0, 2, 3)
        return gxp[:, :, pt:pt + h, pl:pl + wd], gw, gb

    return np.ascontiguousarray(out), back


# ---------------------------------------------------------------- initialisation

def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------- gradient check

class NonFiniteGradient(FloatingPointError):
    pass


def _masked_eval(loss_fn):
    global _MASKS
    _MASKS = []
    try:
        value = float(loss_fn().data)
        return value, _MASKS
    finally:
        _MASKS = None


def _same_masks(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               floor: float = 1e-8, skip_kinks: bool = True):
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    Every parameter tensor is checked; with ``max_entries`` set, tensors larger
    than that are checked on a seeded random subset of entries. With
    ``skip_kinks`` a probe whose +h or -h evaluation flips any relu activation
    relative to the unperturbed pass is not scored, since the loss is not
    differentiable across that interval. Returns
    ``(worst_relative_error, per_parameter_errors, skipped_probes)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    base_masks = _masked_eval(loss_fn)[1] if skip_kinks else None
    rng = rng or np.random.default_rng(0)
    report = {}
    worst = 0.0
    skipped = 0
    for idx, p in enumerate(params):
        label = p.name or f"param[{idx}]"
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite reverse-mode gradient in {label}")
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        err = 0.0
        for e in entries:
            orig = flat[e]
            flat[e] = orig + h
            up, up_masks = _masked_eval(loss_fn)
            flat[e] = orig - h
            down, down_masks = _masked_eval(loss_fn)
            flat[e] = orig
            if skip_kinks and not (_same_masks(base_masks, up_masks) and _same_masks(base_masks, down_masks)):
                skipped += 1
                continue
            num = (up - down) / (2 * h)
            if not math.isfinite(num):
                raise NonFiniteGradient(f"non-finite numerical gradient in {label}[{e}]")
            denom = max(abs(num), abs(gflat[e]), floor)
            err = max(err, abs(num - gflat[e]) / denom)
        report[label] = err
        worst = max(worst, err)
    return worst, report, skipped
