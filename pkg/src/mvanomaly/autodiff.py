"""Minimal reverse-mode automatic differentiation over numpy arrays.

Purpose-built for the loss stack: float64 only, no in-place mutation, and a
handful of ops. Every Var holds a value plus (parent, vjp) edges; backward()
walks the graph once in reverse topological order and returns gradients for
the requested leaves without mutating any state, so one graph can be
differentiated several times.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("value", "_parents")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = parents

    # arithmetic sugar; constants are wrapped as leaf Vars
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return powc(self, exponent)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def shape(self):
        return self.value.shape


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (the reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        (
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value / b.value,
        (
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
        ),
    )


def neg(a) -> Var:
    a = as_var(a)
    return Var(-a.value, ((a, lambda g: -g),))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    out = av @ bv

    def grad_a(g):
        if av.ndim == 1 and bv.ndim == 2:
            return g @ bv.T
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv)
        return g @ bv.T

    def grad_b(g):
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ g
        return av.T @ g

    return Var(out, ((a, grad_a), (b, grad_b)))


def tanh(a) -> Var:
    a = as_var(a)
    t = np.tanh(a.value)
    return Var(t, ((a, lambda g: g * (1.0 - t * t)),))


def exp(a) -> Var:
    a = as_var(a)
    e = np.exp(a.value)
    return Var(e, ((a, lambda g: g * e),))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), ((a, lambda g: g / a.value),))


def sqrt(a) -> Var:
    a = as_var(a)
    s = np.sqrt(a.value)
    return Var(s, ((a, lambda g: g / (2.0 * s)),))


def powc(a, exponent: float) -> Var:
    a = as_var(a)
    p = float(exponent)
    return Var(a.value**p, ((a, lambda g: g * p * a.value ** (p - 1.0)),))


def relu(a) -> Var:
    a = as_var(a)
    out = np.maximum(a.value, 0.0)
    active = a.value > 0.0  # subgradient 0 at the kink
    return Var(out, ((a, lambda g: g * active),))


def clip(a, lo: float, hi: float) -> Var:
    a = as_var(a)
    out = np.clip(a.value, lo, hi)
    inside = (a.value > lo) & (a.value < hi)
    return Var(out, ((a, lambda g: g * inside),))


def l2norm(a) -> Var:
    """Euclidean norm of a vector, with gradient 0 at the origin."""
    a = as_var(a)
    n = float(np.sqrt(np.sum(a.value * a.value)))

    def grad(g):
        if n == 0.0:
            return np.zeros_like(a.value)
        return g * (a.value / n)

    return Var(n, ((a, grad),))


def vsum(a, axis=None, keepdims: bool = False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def grad(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Var(out, ((a, grad),))


def vmean(a, axis=None) -> Var:
    a = as_var(a)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return vsum(a, axis=axis) / float(count)


def transpose(a) -> Var:
    a = as_var(a)
    return Var(a.value.T, ((a, lambda g: g.T),))


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(
        a.value.reshape(shape), ((a, lambda g: g.reshape(a.value.shape)),)
    )


def take(a, key) -> Var:
    a = as_var(a)

    def grad(g):
        out = np.zeros_like(a.value)
        np.add.at(out, key, g)
        return out

    return Var(a.value[key], ((a, grad),))


def stack(items, axis: int = 0) -> Var:
    items = [as_var(x) for x in items]
    out = np.stack([x.value for x in items], axis=axis)

    def make_grad(i):
        return lambda g: np.take(g, i, axis=axis)

    return Var(out, tuple((x, make_grad(i)) for i, x in enumerate(items)))


def concat(items, axis: int = 0) -> Var:
    items = [as_var(x) for x in items]
    out = np.concatenate([x.value for x in items], axis=axis)
    offsets = np.cumsum([0] + [x.value.shape[axis] for x in items])

    def make_grad(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        return lambda g: g[tuple(sl)]

    return Var(out, tuple((x, make_grad(i)) for i, x in enumerate(items)))


def softmax_temp(logits, tau: float) -> Var:
    """Row softmax of logits/tau along the last axis.

    The stabilizing max is treated as a constant, which leaves the true
    softmax gradient unchanged (shift invariance).
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = div(as_var(logits), tau)
    shift = z.value.max(axis=-1, keepdims=True)
    e = exp(sub(z, shift))
    return div(e, vsum(e, axis=-1, keepdims=True))


def upsample_bilinear(a, out_hw, align: str = "corners") -> Var:
    """Bilinear interpolation of a 2-D map.

    align="corners" spans input corner to corner; align="centers" treats
    samples as cell centers, which keeps a coarse grid's cells over their own
    output regions. Uses the a + w*(b-a) lerp form so constant maps are exact
    fixed points, and integer sample hits recover grid values exactly.
    """
    a = as_var(a)
    h, w = a.value.shape
    oh, ow = out_hw
    if align not in ("corners", "centers"):
        raise ValueError(f"unknown align mode {align!r}")

    def src_grid(n_in, n_out):
        if n_in == 1 or n_out == 1:
            lo = np.zeros(n_out, dtype=np.int64)
            return lo, lo.copy(), np.zeros(n_out, dtype=np.float64)
        if align == "corners":
            pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        else:
            pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
            pos = np.clip(pos, 0.0, n_in - 1.0)
        lo = np.floor(pos).astype(np.int64)
        # integer hits keep w = 0 so grid points are recovered exactly
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, wr = src_grid(h, oh)
    c0, c1, wc = src_grid(w, ow)
    R0, C0 = np.meshgrid(r0, c0, indexing="ij")
    R1, C1 = np.meshgrid(r1, c1, indexing="ij")
    WR = wr[:, None]
    WC = wc[None, :]

    v = a.value
    top = v[R0, C0] + WC * (v[R0, C1] - v[R0, C0])
    bot = v[R1, C0] + WC * (v[R1, C1] - v[R1, C0])
    out = top + WR * (bot - top)

    def grad(g):
        gt = g * (1.0 - WR)
        gb = g * WR
        gx = np.zeros_like(v)
        np.add.at(gx, (R0, C0), gt * (1.0 - WC))
        np.add.at(gx, (R0, C1), gt * WC)
        np.add.at(gx, (R1, C0), gb * (1.0 - WC))
        np.add.at(gx, (R1, C1), gb * WC)
        return gx

    return Var(out, ((a, grad),))


def backward(root: Var, wrt) -> list[np.ndarray]:
    """Gradients of the scalar root with respect to each Var in wrt."""
    if root.value.ndim != 0 and root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    topo: list[Var] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack_.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in node._parents:
            contrib = vjp(g)
            prev = grads.get(id(parent))
            grads[id(parent)] = contrib if prev is None else prev + contrib
    return [
        grads.get(id(w), np.zeros_like(w.value)) for w in wrt
    ]
