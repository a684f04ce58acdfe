"""Minimal reverse-mode autodiff over 2-D float64 arrays.

Ops are module-level functions that accept either `Var` nodes or plain
numpy arrays. Plain arrays short-circuit to raw numpy (no tape), which is
what the inference engine uses; `Var` inputs record a graph for
`backward`. This keeps a single implementation of the model math for both
training and inference.
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .numerics import ShapeError

__all__ = ["Var", "backward", "matmul", "transpose", "add", "mul", "scale",
           "gelu", "layer_norm", "softmax_rows", "cross_entropy",
           "gather_rows", "concat_rows", "slice_cols", "concat_cols",
           "reshape", "data_of"]


class Var:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "parents", "vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp  # callable(upstream) -> tuple of parent grads

    @property
    def shape(self):
        return self.data.shape


def data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Var) else x


def _is_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def backward(loss: Var) -> None:
    """Accumulate gradients of a scalar `loss` into every reachable Var."""
    topo: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if not isinstance(parent, Var) or g is None:
                continue
            if parent.grad is None:
                # copy: vjps may return the upstream array itself
                parent.grad = np.array(g)
            else:
                parent.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` back down to `shape` (supports the (1, d) row-vector case)."""
    if g.shape == tuple(shape):
        return g
    out = g
    while out.ndim > len(shape):
        out = out.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and out.shape[ax] != 1:
            out = out.sum(axis=ax, keepdims=True)
    return out


def matmul(a, b):
    ad, bd = data_of(a), data_of(b)
    out = numerics.matmul(ad, bd)
    if not _is_var(a, b):
        return out

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return Var(out, (a, b), vjp)


def transpose(a):
    ad = data_of(a)
    if not _is_var(a):
        return ad.T
    return Var(ad.T, (a,), lambda g: (g.T,))


def add(a, b):
    ad, bd = data_of(a), data_of(b)
    out = ad + bd
    if not _is_var(a, b):
        return out

    def vjp(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return Var(out, (a, b), vjp)


def mul(a, b):
    ad, bd = data_of(a), data_of(b)
    out = ad * bd
    if not _is_var(a, b):
        return out

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Var(out, (a, b), vjp)


def scale(a, c: float):
    ad = data_of(a)
    if not _is_var(a):
        return ad * c
    return Var(ad * c, (a,), lambda g: (g * c,))


# tanh-approximation GELU; smooth everywhere, which the finite-difference
# gradient checks rely on
_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a):
    ad = data_of(a)
    inner = _GELU_C * (ad + 0.044715 * ad ** 3)
    t = np.tanh(inner)
    out = 0.5 * ad * (1.0 + t)
    if not _is_var(a):
        return out

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * ad ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * ad * (1.0 - t ** 2) * dinner
        return (g * d,)

    return Var(out, (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    xd, gd, bd = data_of(x), data_of(gain), data_of(bias)
    out = numerics.layer_norm(xd, gd, bd, eps)
    if not _is_var(x, gain, bias):
        return out

    mu = xd.mean(axis=1, keepdims=True)
    sigma = np.sqrt(xd.var(axis=1, keepdims=True) + eps)
    xhat = (xd - mu) / sigma

    def vjp(g):
        n = xd.shape[1]
        gg = g * gd  # upstream through the affine gain
        dxhat_mean = gg.mean(axis=1, keepdims=True)
        proj = (gg * xhat).mean(axis=1, keepdims=True)
        dx = (gg - dxhat_mean - xhat * proj) / sigma
        dgain = _unbroadcast(g * xhat, gd.shape)
        dbias = _unbroadcast(g, bd.shape)
        return dx, dgain, dbias

    return Var(out, (x, gain, bias), vjp)


def softmax_rows(x):
    xd = data_of(x)
    p = numerics.softmax_rows(xd)
    if not _is_var(x):
        return p

    def vjp(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return Var(p, (x,), vjp)


def cross_entropy(logits, targets):
    """Summed negative log-likelihood of `targets`; scalar output."""
    targets = np.asarray(list(targets), dtype=np.int64)
    ld = data_of(logits)
    loss = numerics.cross_entropy(ld, targets)
    if not _is_var(logits):
        return loss

    def vjp(g):
        p = numerics.softmax_rows(ld)
        p[np.arange(len(targets)), targets] -= 1.0
        return (float(g) * p,)

    return Var(np.float64(loss), (logits,), vjp)


def gather_rows(table, ids):
    """Embedding lookup: rows of `table` selected by integer `ids`."""
    ids = np.asarray(list(ids), dtype=np.int64)
    td = data_of(table)
    out = td[ids]
    if not _is_var(table):
        return out

    def vjp(g):
        gt = np.zeros_like(td)
        np.add.at(gt, ids, g)
        return (gt,)

    return Var(out, (table,), vjp)


def concat_rows(parts):
    datas = [data_of(p) for p in parts]
    out = np.concatenate(datas, axis=0)
    if not _is_var(*parts):
        return out
    sizes = [d.shape[0] for d in datas]

    def vjp(g):
        grads, ofs = [], 0
        for s in sizes:
            grads.append(g[ofs:ofs + s])
            ofs += s
        return tuple(grads)

    return Var(out, tuple(parts), vjp)


def slice_cols(x, lo: int, hi: int):
    xd = data_of(x)
    out = xd[:, lo:hi]
    if not _is_var(x):
        return out

    def vjp(g):
        gx = np.zeros_like(xd)
        gx[:, lo:hi] = g
        return (gx,)

    return Var(out, (x,), vjp)


def reshape(x, shape):
    xd = data_of(x)
    out = xd.reshape(shape)
    if not _is_var(x):
        return out
    return Var(out, (x,), lambda g: (g.reshape(xd.shape),))


def concat_cols(parts):
    datas = [data_of(p) for p in parts]
    out = np.concatenate(datas, axis=1)
    if not _is_var(*parts):
        return out
    sizes = [d.shape[1] for d in datas]

    def vjp(g):
        grads, ofs = [], 0
        for s in sizes:
            grads.append(g[:, ofs:ofs + s])
            ofs += s
        return tuple(grads)

    return Var(out, tuple(parts), vjp)
