"""Inner loops: surrogate cross-entropy, Monte-Carlo choice tallies, and the
truncated-normal latent sweep of the Gibbs sampler.

Each kernel has a numba implementation (``*_numba``) and a numpy one
(``*_numpy``).  The unsuffixed name is whichever ``_accel.USE_NUMBA`` picks.
Both implementations are importable so they can be compared directly.
"""
import math

import numpy as np
from scipy import special

from . import _accel
from ._accel import njit, prange

LOG_FLOOR = 1e-12
NEG_LOG_FLOOR = -math.log(LOG_FLOOR)
U_CLIP = 1e-12
DEGENERATE_WIDTH = 1e-12

# scheme codes shared with surrogates.SurrogateScheme
STE, GUMBEL, COMBINED, SOFTMAX = 0, 1, 2, 3
# STE and SOFTMAX use no noise; GUMBEL and SOFTMAX report the soft forward value


# ---------------------------------------------------------------------------
# surrogate cross-entropy


def surrogate_ce_numpy(u, g, y, beta, mode):
    """Per-observation surrogate cross-entropy and its gradient.

    u, g : (m, L, d) utilities and Gumbel noise (``g`` ignored for STE)
    y : (m,) chosen alternative, 0-based
    Returns (loss (m,), grad (m, L, d), clamped (m,)).  ``loss`` averages over
    the L draws; ``grad`` is d loss / d u for the smooth surrogate.
    """
    m, L, d = u.shape
    noiseless = mode in (STE, SOFTMAX)
    s = u / beta if noiseless else (u + g) / beta
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    tot = e.sum(axis=-1, keepdims=True)
    soft = e / tot
    yi = y.reshape(m, 1, 1)
    if mode in (GUMBEL, SOFTMAX):
        neglog = np.log(tot[..., 0]) - np.take_along_axis(s, yi, axis=-1)[..., 0]
    else:
        hit = np.argmax(u, axis=-1) == y[:, None]
        neglog = np.where(hit, 0.0, np.inf)
    clamped = neglog > NEG_LOG_FLOOR
    ce = np.minimum(neglog, NEG_LOG_FLOOR)
    grad = soft
    np.subtract.at(grad, (np.arange(m)[:, None], np.arange(L)[None, :], y[:, None]), 1.0)
    grad /= beta * L
    return ce.mean(axis=1), grad, clamped.sum(axis=1)


@njit(parallel=True)
def surrogate_ce_numba(u, g, y, beta, mode):
    m, L, d = u.shape
    loss = np.zeros(m)
    grad = np.empty((m, L, d))
    clamped = np.zeros(m, dtype=np.int64)
    for i in prange(m):
        yi = y[i]
        acc = 0.0
        nclamp = 0
        for l in range(L):
            smax = -np.inf
            amax = 0
            umax = -np.inf
            for k in range(d):
                if mode == STE or mode == SOFTMAX:
                    sk = u[i, l, k] / beta
                else:
                    sk = (u[i, l, k] + g[i, l, k]) / beta
                grad[i, l, k] = sk
                if sk > smax:
                    smax = sk
                if u[i, l, k] > umax:
                    umax = u[i, l, k]
                    amax = k
            tot = 0.0
            for k in range(d):
                ek = math.exp(grad[i, l, k] - smax)
                grad[i, l, k] = ek
                tot += ek
            if mode == GUMBEL:
                sy = (u[i, l, yi] + g[i, l, yi]) / beta
                nl = math.log(tot) - (sy - smax)
            elif mode == SOFTMAX:
                sy = u[i, l, yi] / beta
                nl = math.log(tot) - (sy - smax)
            else:
                nl = 0.0 if amax == yi else np.inf
            if nl > NEG_LOG_FLOOR:
                nl = NEG_LOG_FLOOR
                nclamp += 1
            acc += nl
            scale = 1.0 / (beta * L)
            for k in range(d):
                grad[i, l, k] = grad[i, l, k] / tot * scale
            grad[i, l, yi] -= scale
        loss[i] = acc / L
        clamped[i] = nclamp
    return loss, grad, clamped


# ---------------------------------------------------------------------------
# Monte-Carlo choice tallies


def choice_counts_numpy(mean, eps, chunk=256):
    """Tally differenced-space choices of ``mean[i] + eps[r]`` over r.

    mean : (n, k) systematic differenced utilities
    eps : (R, k) correlated noise draws (shared across observations)
    Returns (n, k + 1) int64 counts; column 0 is the baseline alternative.
    """
    n, k = mean.shape
    out = np.zeros((n, k + 1), dtype=np.int64)
    for start in range(0, n, chunk):
        v = mean[start:start + chunk, None, :] + eps[None, :, :]
        c = np.where(v.max(axis=-1) <= 0.0, 0, 1 + np.argmax(v, axis=-1))
        rows = np.repeat(np.arange(c.shape[0]), c.shape[1])
        np.add.at(out[start:start + chunk], (rows, c.ravel()), 1)
    return out


@njit(parallel=True)
def choice_counts_numba(mean, eps):
    n, k = mean.shape
    R = eps.shape[0]
    out = np.zeros((n, k + 1), dtype=np.int64)
    for i in prange(n):
        for r in range(R):
            best = 0.0
            arg = 0
            for j in range(k):
                v = mean[i, j] + eps[r, j]
                if v > best:
                    best = v
                    arg = j + 1
            out[i, arg] += 1
    return out


# ---------------------------------------------------------------------------
# truncated normal


@njit
def _ndtr(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


@njit
def _ndtri(p):
    # Acklam's rational approximation plus one Halley step against erfc
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p > 1.0 - 0.02425:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    e = _ndtr(x) - p
    t = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - t / (1.0 + 0.5 * x * t)


@njit
def _trunc_std(a, b, w):
    """Standard normal restricted to (a, b) by inverse CDF; returns (x, flag).

    flag is 0 for a regular draw, 1 for a degenerate interval (midpoint) and
    2 when the interval carries no representable mass (tail approximation).
    """
    if b - a < DEGENERATE_WIDTH:
        return 0.5 * (a + b), 1
    if w < U_CLIP:
        w = U_CLIP
    elif w > 1.0 - U_CLIP:
        w = 1.0 - U_CLIP
    flip = a > 0.0
    if flip:
        a, b = -b, -a
    pa = _ndtr(a)
    pb = _ndtr(b)
    if pb - pa > 0.0 and pb > 1e-300:
        x = _ndtri(pa + w * (pb - pa))
        flag = 0
    else:
        # mass underflow far in the lower tail: exponential tail of the
        # density near the upper bound b
        if b == np.inf or b == -np.inf:
            x = a
        else:
            x = b + math.log(w) / abs(b)
        flag = 2
    if x < a:
        x = a
    elif x > b:
        x = b
    if flip:
        x = -x
    return x, flag


@njit
def trunc_normal_numba(mean, sd, lower, upper, w):
    out = np.empty(mean.shape[0])
    flags = np.zeros(mean.shape[0], dtype=np.int64)
    for i in range(mean.shape[0]):
        x, f = _trunc_std((lower[i] - mean[i]) / sd[i], (upper[i] - mean[i]) / sd[i], w[i])
        out[i] = mean[i] + sd[i] * x
        flags[i] = f
    return out, flags


def trunc_normal_numpy(mean, sd, lower, upper, w):
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    a = (np.asarray(lower, dtype=np.float64) - mean) / sd
    b = (np.asarray(upper, dtype=np.float64) - mean) / sd
    w = np.clip(w, U_CLIP, 1.0 - U_CLIP)
    flags = np.zeros(a.shape, dtype=np.int64)
    degenerate = (b - a) < DEGENERATE_WIDTH
    flip = a > 0.0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    pa = special.ndtr(a2)
    pb = special.ndtr(b2)
    ok = (pb - pa > 0.0) & (pb > 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = special.ndtri(pa + w * (pb - pa))
        tail = np.where(np.isfinite(b2), b2 + np.log(w) / np.abs(b2), a2)
    x = np.where(ok, x, tail)
    x = np.clip(x, a2, b2)
    x = np.where(flip, -x, x)
    with np.errstate(invalid="ignore"):
        x = np.where(degenerate, 0.5 * (a + b), x)
    flags[~ok] = 2
    flags[degenerate] = 1
    return mean + sd * x, flags


# ---------------------------------------------------------------------------
# Gibbs latent sweep


@njit(parallel=True)
def gibbs_latent_sweep_numba(du, mean, prec, y, w):
    """One single-site sweep over every observation's differenced utilities.

    du : (n, k) current latent draws, updated in place
    mean : (n, k) systematic part dX_i a
    prec : (k, k) precision of the differenced errors
    y : (n,) chosen alternative, 0 = baseline
    w : (n, k) uniforms driving the inverse-CDF draws
    Returns per-observation guard-event counts.
    """
    n, k = du.shape
    events = np.zeros(n, dtype=np.int64)
    for i in prange(n):
        yi = y[i]
        for j in range(k):
            acc = 0.0
            for l in range(k):
                if l != j:
                    acc += prec[j, l] * (du[i, l] - mean[i, l])
            cm = mean[i, j] - acc / prec[j, j]
            sd = 1.0 / math.sqrt(prec[j, j])
            lo = -np.inf
            hi = np.inf
            if yi == 0:
                hi = 0.0
            elif yi - 1 == j:
                lo = 0.0
                for l in range(k):
                    if l != j and du[i, l] > lo:
                        lo = du[i, l]
            else:
                hi = du[i, yi - 1]
            x, f = _trunc_std((lo - cm) / sd, (hi - cm) / sd, w[i, j])
            du[i, j] = cm + sd * x
            if f != 0:
                events[i] += 1
    return events


def gibbs_latent_sweep_numpy(du, mean, prec, y, w):
    n, k = du.shape
    events = np.zeros(n, dtype=np.int64)
    chosen = y - 1
    rows = np.arange(n)
    for j in range(k):
        others = [l for l in range(k) if l != j]
        acc = (du[:, others] - mean[:, others]) @ prec[j, others]
        cm = mean[:, j] - acc / prec[j, j]
        sd = np.full(n, 1.0 / math.sqrt(prec[j, j]))
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        hi[y == 0] = 0.0
        own = chosen == j
        if others:
            rival = np.maximum(du[:, others].max(axis=1), 0.0)
        else:
            rival = np.zeros(n)
        lo[own] = rival[own]
        other = (y > 0) & ~own
        hi[other] = du[rows[other], chosen[other]]
        x, f = trunc_normal_numpy(cm, sd, lo, hi, w[:, j])
        du[:, j] = x
        events += f != 0
    return events


# ---------------------------------------------------------------------------
# dispatch

if _accel.USE_NUMBA:
    surrogate_ce = surrogate_ce_numba
    choice_counts = choice_counts_numba
    trunc_normal = trunc_normal_numba
    gibbs_latent_sweep = gibbs_latent_sweep_numba
else:
    surrogate_ce = surrogate_ce_numpy
    choice_counts = choice_counts_numpy
    trunc_normal = trunc_normal_numpy
    gibbs_latent_sweep = gibbs_latent_sweep_numpy


def implementations(name):
    """Return ``(numba_impl, numpy_impl)`` for a kernel name (numba may be None)."""
    return globals()[name + "_numba"], globals()[name + "_numpy"]
