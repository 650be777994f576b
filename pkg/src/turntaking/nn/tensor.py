"""Dense float64 tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor`.  When any input requires a gradient
(and grad mode is on) the result records its parents and a closure mapping the
upstream gradient to one gradient per parent.  :func:`backward` walks the
recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


_GRAD_ENABLED = True
CHECK_FINITE = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] | None = None
        self._backward: Callable | None = None
        self.op = ""

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _not_scalar():
    raise ValueError("item() requires a single-element tensor")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents or ():
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Intermediate gradients are transient, so repeated calls accumulate into the
    leaves exactly once per call.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._parents is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)),
        "mul",
    )


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _result(out, (a,), lambda g: (-g * out * out,), "reciprocal")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(ad)
    return _result(out, (a,), lambda g: (g / ad,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clip")


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return scale(sum_(a, axes, keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a: Tensor, idx) -> Tensor:
    shape = a.shape
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), bw, "index")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    sa, sb = a.shape, b.shape

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, sa[-1]).T @ g.reshape(-1, sb[-1])
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, sb)
        return _unbroadcast(ga, sa), gb

    return _result(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- normalisations / activations


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (a,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-9) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(xhat * gd + beta.data, (x, gamma, beta), bw, "layer_norm")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
    axis: int = -1,
) -> Tensor:
    """Batch norm with per-channel statistics over every axis except ``axis``.

    In training mode the running buffers are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    ax = axis % xd.ndim
    red = tuple(i for i in range(xd.ndim) if i != ax)
    bshape = tuple(xd.shape[ax] if i == ax else 1 for i in range(xd.ndim))
    gd = gamma.data.reshape(bshape)
    if training:
        m = int(np.prod([xd.shape[i] for i in red]))
        mu = xd.mean(axis=red, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=red, keepdims=True)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu.reshape(-1)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.reshape(-1) * (m / max(m - 1, 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv

        def bw(g):
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=red, keepdims=True) - xhat * (gh * xhat).mean(axis=red, keepdims=True))
            return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (xd - running_mean.reshape(bshape)) * inv

        def bw(g):
            return g * gd * inv, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(xhat * gd + beta.data.reshape(bshape), (x, gamma, beta), bw, "batch_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n})")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _result(table.data[ids], (table,), bw, "embedding")


def _im2col(xd: np.ndarray, sh: int, sw: int) -> tuple[np.ndarray, int, int]:
    cin, n, h, wd = xd.shape
    ho, wo = -(-h // sh), -(-wd // sw)
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((3, 3, cin, n, ho, wo))
    for i in range(3):
        for j in range(3):
            cols[i, j] = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
    return cols.reshape(9 * cin, -1), ho, wo


def conv2d(x: Tensor, w: Tensor, stride: tuple[int, int] = (1, 1)) -> Tensor:
    """3x3 'same' convolution in (C, N, H, W) layout.

    ``x`` is (C_in, N, H, W), ``w`` is (C_out, 3, 3, C_in); the output is
    (C_out, N, ceil(H / sh), ceil(W / sw)).  Channel-major layout keeps every
    im2col copy contiguous along W, which matters for small channel counts.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[1:3] != (3, 3) or w.shape[3] != x.shape[0]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")
    sh, sw = stride
    cin, n, h, wd = x.shape
    cout = w.shape[0]
    cols, ho, wo = _im2col(x.data, sh, sw)
    wmat = w.data.reshape(cout, 9 * cin)
    out = (wmat @ cols).reshape(cout, n, ho, wo)

    def bw(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        if (sh, sw) == (1, 1):
            # input gradient of a stride-1 same conv is a same conv of g with the flipped kernel
            wflip = w.data[:, ::-1, ::-1, :].transpose(3, 1, 2, 0).reshape(cin, 9 * cout)
            gx = (wflip @ _im2col(g, 1, 1)[0]).reshape(cin, n, h, wd)
            return gx, gw
        gcols = (wmat.T @ g2).reshape(3, 3, cin, n, ho, wo)
        gxp = np.zeros((cin, n, h + 2, wd + 2))
        for i in range(3):
            for j in range(3):
                gxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += gcols[i, j]
        return gxp[:, :, 1 : h + 1, 1 : wd + 1], gw

    return _result(out, (x, w), bw, "conv2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """(C, N, H, W) -> (N, C)."""
    return transpose(mean(x, axis=(2, 3)), (1, 0))


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1) -> Tensor:
    """Row-wise cosine similarity of two broadcast-compatible tensors."""
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=axis, keepdims=True))
    if (na == 0).any() or (nb == 0).any():
        raise ZeroDivisionError("cosine similarity of a zero-norm vector is undefined")
    dot = (ad * bd).sum(axis=axis, keepdims=True)
    cos = dot / (na * nb)
    sa, sb = a.shape, b.shape

    def bw(g):
        g = np.expand_dims(g, axis)
        ga = g * (bd / (na * nb) - cos * ad / (na * na))
        gb = g * (ad / (na * nb) - cos * bd / (nb * nb))
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return _result(np.squeeze(cos, axis=axis), (a, b), bw, "cosine_similarity")


def binary_cross_entropy(p: Tensor, y: np.ndarray, eps: float = 1e-12) -> Tensor:
    """Mean of -[y log p + (1-y) log(1-p)], with p clamped to [eps, 1-eps]."""
    y = np.asarray(y, dtype=np.float64)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    pd = p.data
    pc = np.clip(pd, eps, 1.0 - eps)
    inside = (pd >= eps) & (pd <= 1.0 - eps)
    losses = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    n = losses.size

    def bw(g):
        return (g * inside * (pc - y) / (pc * (1.0 - pc)) / n,)

    return _result(np.asarray(losses.mean()), (p,), bw, "bce")


def l2_normalize(x: Tensor, axis: int = -1, strict: bool = False) -> Tensor:
    """x / ||x|| along ``axis``; zero vectors map to zero unless ``strict``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    zero = norm == 0
    if strict and zero.any():
        raise ZeroDivisionError("cannot normalize a zero-norm vector")
    safe = np.where(zero, 1.0, norm)
    out = np.where(zero, 0.0, xd / safe)

    def bw(g):
        proj = (g * out).sum(axis=axis, keepdims=True)
        return (np.where(zero, 0.0, (g - out * proj) / safe),)

    return _result(out, (x,), bw, "l2_normalize")


def signed_sqrt(x: Tensor, eps: float = 1e-12) -> Tensor:
    """sign(x) * sqrt(|x|); the derivative is capped near zero via ``eps``."""
    xd = x.data
    a = np.abs(xd)
    out = np.sign(xd) * np.sqrt(a)

    def bw(g):
        return (g * 0.5 / np.sqrt(a + eps),)

    return _result(out, (x,), bw, "signed_sqrt")
