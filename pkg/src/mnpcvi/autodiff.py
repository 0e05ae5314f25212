"""Reverse-mode gradients over a fixed set of batched array primitives.

Not a general tape: only the operations the MNP objective needs are
registered (affine maps, softplus/log/exp/sqrt, matrix products, LDL and
Cholesky-factor reconstruction, log-determinants, quadratic forms and trace
terms through factorisations, and the argmax surrogate cross-entropy).
Primitives accept plain arrays too, in which case they just return values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .numerics import sigmoid, softplus as _softplus, symmetrize


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or inf; ``primitive`` names it."""

    def __init__(self, primitive, detail=""):
        self.primitive = primitive
        msg = f"non-finite value produced by primitive '{primitive}'"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Var:
    __slots__ = ("value", "parents", "vjp", "name", "grad")

    def __init__(self, value, parents=(), vjp=None, name="leaf"):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def __repr__(self):
        return f"Var({self.name}, shape={self.shape})"


def value(x):
    return x.value if isinstance(x, Var) else x


def _make(name, out, parents, vjp):
    out = np.asarray(out, dtype=np.float64) if not np.isscalar(out) else np.float64(out)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(name)
    if any(isinstance(p, Var) for p in parents):
        return Var(out, parents, vjp, name)
    return out


def _unbroadcast(g, shape):
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return np.shape(value(x))


# elementwise ---------------------------------------------------------------

def add(a, b):
    sa, sb = _shape(a), _shape(b)
    return _make("add", value(a) + value(b), (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    sa, sb = _shape(a), _shape(b)
    return _make("sub", value(a) - value(b), (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    va, vb = value(a), value(b)
    sa, sb = np.shape(va), np.shape(vb)
    return _make("mul", va * vb, (a, b),
                 lambda g: (_unbroadcast(g * vb, sa), _unbroadcast(g * va, sb)))


def div(a, b):
    va, vb = value(a), value(b)
    sa, sb = np.shape(va), np.shape(vb)
    out = va / vb
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / vb, sa), _unbroadcast(-g * out / vb, sb)))


def softplus(x):
    vx = value(x)
    return _make("softplus", _softplus(vx), (x,), lambda g: (g * sigmoid(vx),))


def log(x):
    vx = value(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(vx)
    return _make("log", out, (x,), lambda g: (g / vx,))


def exp(x):
    out = np.exp(value(x))
    return _make("exp", out, (x,), lambda g: (g * out,))


def sqrt(x):
    with np.errstate(invalid="ignore"):
        out = np.sqrt(value(x))
    return _make("sqrt", out, (x,), lambda g: (0.5 * g / out,))


# structural ----------------------------------------------------------------

def take(x, index):
    vx = value(x)
    shape = vx.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _make("take", vx[index], (x,), vjp)


def reshape(x, shape):
    vx = value(x)
    old = vx.shape
    return _make("reshape", vx.reshape(shape), (x,), lambda g: (np.reshape(g, old),))


def transpose(x):
    return _make("transpose", np.swapaxes(value(x), -1, -2), (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    vx = value(x)
    shape = vx.shape

    def vjp(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", vx.sum(axis=axis), (x,), vjp)


def diag_embed(v):
    vv = value(v)
    k = vv.shape[-1]
    out = np.zeros(vv.shape + (k,))
    idx = np.arange(k)
    out[..., idx, idx] = vv
    return _make("diag_embed", out, (v,),
                 lambda g: (np.diagonal(g, axis1=-2, axis2=-1).copy(),))


def trace(x):
    vx = value(x)
    k = vx.shape[-1]
    return _make("trace", np.trace(vx, axis1=-2, axis2=-1), (x,),
                 lambda g: (np.asarray(g)[..., None, None] * np.eye(k),))


def unit_lower(v, k):
    """Unit lower-triangular matrices from row-major strict-lower entries."""
    vv = value(v)
    rows, cols = np.tril_indices(k, -1)
    out = np.broadcast_to(np.eye(k), vv.shape[:-1] + (k, k)).copy()
    out[..., rows, cols] = vv
    return _make("unit_lower", out, (v,), lambda g: (g[..., rows, cols],))


def chol_factor(v, k):
    """Lower-triangular factor from row-major lower entries (diagonal included);
    diagonal entries pass through softplus so the factor is always invertible."""
    vv = value(v)
    rows, cols = np.tril_indices(k)
    on_diag = rows == cols
    entries = np.where(on_diag, _softplus(vv), vv)
    out = np.zeros(vv.shape[:-1] + (k, k))
    out[..., rows, cols] = entries
    dvals = np.where(on_diag, sigmoid(vv), 1.0)
    return _make("chol_factor", out, (v,), lambda g: (g[..., rows, cols] * dvals,))


# linear algebra --------------------------------------------------------------

def matmul(a, b):
    va, vb = value(a), value(b)
    sa, sb = va.shape, vb.shape

    def vjp(g):
        ga = g @ np.swapaxes(vb, -1, -2)
        gb = np.swapaxes(va, -1, -2) @ g
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    with np.errstate(over="ignore", invalid="ignore"):
        out = va @ vb
    return _make("matmul", out, (a, b), vjp)


def affine(x, W, b):
    """``x @ W + b`` for a batch of row vectors."""
    vx, vW, vb = value(x), value(W), value(b)

    def vjp(g):
        return g @ vW.T, vx.T @ g, g.sum(axis=0)

    with np.errstate(over="ignore", invalid="ignore"):
        out = vx @ vW + vb
    return _make("affine", out, (x, W, b), vjp)


def ldl_compose(strict, dvec, k):
    """``L diag(d) L^T`` from strict-lower entries of unit ``L`` and diagonal ``d``."""
    L = unit_lower(value(strict), k)
    dd = value(dvec)
    LD = L * dd[..., None, :]
    out = LD @ np.swapaxes(L, -1, -2)
    rows, cols = np.tril_indices(k, -1)

    def vjp(g):
        gs = g + np.swapaxes(g, -1, -2)
        gL = gs @ LD
        gd = np.einsum("...ij,...ik,...kj->...j", L, g, L)
        return gL[..., rows, cols], gd

    return _make("ldl_compose", out, (strict, dvec), vjp)


def _chol(S, name):
    try:
        return np.linalg.cholesky(symmetrize(S))
    except np.linalg.LinAlgError:
        raise NonFiniteError(name, "matrix not positive definite") from None


def logdet_spd(S):
    vS = value(S)
    G = _chol(vS, "logdet_spd")
    out = 2.0 * np.sum(np.log(np.diagonal(G, axis1=-2, axis2=-1)), axis=-1)

    def vjp(g):
        inv = np.linalg.inv(symmetrize(vS))
        return (np.asarray(g)[..., None, None] * inv,)

    return _make("logdet_spd", out, (S,), vjp)


def inv_quad(S, r):
    """``r^T S^{-1} r`` over a batch (S may be shared across the batch)."""
    vS, vr = value(S), value(r)
    sS, sr = vS.shape, vr.shape
    Sb = np.broadcast_to(vS, vr.shape[:-1] + vS.shape[-2:])
    sol = np.linalg.solve(Sb, vr[..., None])[..., 0]
    out = np.sum(vr * sol, axis=-1)

    def vjp(g):
        g = np.asarray(g)
        gS = -g[..., None, None] * sol[..., :, None] * sol[..., None, :]
        gr = 2.0 * g[..., None] * sol
        return _unbroadcast(gS, sS), _unbroadcast(gr, sr)

    return _make("inv_quad", out, (S, r), vjp)


def trace_solve(S, Q):
    """``tr(S^{-1} Q)`` over a batch of Q (S may be shared)."""
    vS, vQ = value(S), value(Q)
    sS, sQ = vS.shape, vQ.shape
    inv = np.linalg.inv(symmetrize(vS))
    out = np.einsum("...ij,...ji->...", inv, vQ)

    def vjp(g):
        g = np.asarray(g)
        invT = np.swapaxes(inv, -1, -2)
        gQ = g[..., None, None] * invT
        gS = -g[..., None, None] * (invT @ np.swapaxes(vQ, -1, -2) @ invT)
        return _unbroadcast(gS, sS), _unbroadcast(gQ, sQ)

    return _make("trace_solve", out, (S, Q), vjp)


# argmax surrogate --------------------------------------------------------------

def surrogate_ce(u, g, y, beta, mode):
    """Per-observation L1 term; the backward pass is the smooth surrogate's.

    Returns ``(loss, n_clamped)`` where ``n_clamped`` counts log evaluations
    that hit the 1e-12 floor.
    """
    vu = np.ascontiguousarray(value(u), dtype=np.float64)
    gg = np.ascontiguousarray(g, dtype=np.float64)
    yy = np.ascontiguousarray(y, dtype=np.int64)
    loss, grad, clamped = kernels.surrogate_ce(vu, gg, yy, float(beta), int(mode))
    node = _make("surrogate_ce", loss, (u,), lambda up: (np.asarray(up)[:, None, None] * grad,))
    return node, int(np.sum(clamped))


# driver --------------------------------------------------------------------------

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Var) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    order = _toposort(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for p, gp in zip(node.parents, grads):
            if not isinstance(p, Var):
                continue
            if not np.all(np.isfinite(gp)):
                raise NonFiniteError(node.name, "in backward pass")
            p.grad = gp if p.grad is None else p.grad + gp


def grad(loss_fn, at, has_aux=False):
    """Value and gradient of a scalar ``loss_fn`` at the flat vector ``at``.

    With ``has_aux=True`` the function returns ``(loss, aux)`` and so does
    ``grad`` as ``(value, g, aux)``.
    """
    x = Var(np.array(at, dtype=np.float64), name="params")
    res = loss_fn(x)
    out, aux = res if has_aux else (res, None)
    if not isinstance(out, Var):
        g = np.zeros_like(x.value)
        val = float(np.asarray(out))
    else:
        if np.size(out.value) != 1:
            raise ValueError("loss_fn must return a scalar")
        backward(out)
        g = x.grad if x.grad is not None else np.zeros_like(x.value)
        val = float(out.value)
    return (val, g, aux) if has_aux else (val, g)


# finite-difference verification ---------------------------------------------------

def _first(res):
    # loss functions written for has_aux=True return (loss, aux)
    return res[0] if isinstance(res, tuple) else res


def _scalar(res):
    return float(np.asarray(value(_first(res))))


@dataclass
class FDReport:
    max_error: float
    index: int
    tol: float
    per_segment: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_error < self.tol


def fd_check(loss_fn, at, step=1e-5, tol=1e-4, segments=None, indices=None):
    """Compare ``grad`` against central differences.

    The error per coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``segments`` maps names to slices of the parameter vector; ``indices``
    restricts the check to a subset of coordinates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    at = np.array(at, dtype=np.float64)
    _, g = grad(lambda v: _first(loss_fn(v)), at)
    idx = np.arange(at.size) if indices is None else np.asarray(indices)
    num = np.empty(idx.size)
    for j, i in enumerate(idx):
        xp = at.copy()
        xm = at.copy()
        xp[i] += step
        xm[i] -= step
        num[j] = (_scalar(loss_fn(xp)) - _scalar(loss_fn(xm))) / (2.0 * step)
    err = np.abs(g[idx] - num) / np.maximum(1.0, np.abs(num))
    worst = int(np.argmax(err)) if err.size else 0
    report = FDReport(float(err[worst]) if err.size else 0.0, int(idx[worst]) if err.size else -1, tol)
    for name, sl in (segments or {}).items():
        mask = (idx >= sl.start) & (idx < sl.stop)
        if mask.any():
            e = err[mask]
            w = int(np.argmax(e))
            report.per_segment[name] = (float(e[w]), int(idx[mask][w]))
    return report
