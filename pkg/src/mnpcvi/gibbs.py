"""Data-augmentation Gibbs sampler for the differenced probit model.

The chain runs on the unidentified scale: latent utilities are refreshed one
coordinate at a time from truncated normals, then ``a`` from its Gaussian and
the covariance from its inverse-Wishart full conditional.  Each retained draw
is mapped to the identified scale by trace normalisation, with ``a``
rescaled by the same factor's square root.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import _accel, kernels
from .model import ChoiceDataset, ModelParams, choice_index
from .numerics import STREAM_GIBBS, cholesky, stream

MAX_ALTERNATIVES = 10


@dataclass
class GibbsConfig:
    iterations: int = 3000
    burn_in: int = 1000
    thinning: int = 1
    prior_precision: float = 0.01
    iw_df: Optional[float] = None   # None: d + 1
    seed: int = 0
    debug: bool = False

    def validate(self, d):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be at least 1")
        if not self.prior_precision > 0:
            raise ValueError("prior_precision must be positive")
        if not self.df(d) > d - 2:
            raise ValueError("inverse-Wishart degrees of freedom must exceed d - 2")

    def df(self, d):
        return float(d + 1) if self.iw_df is None else float(self.iw_df)


@dataclass
class PosteriorDraws:
    a: np.ndarray             # (S, p) identified scale
    delta_sigma: np.ndarray   # (S, k, k), trace k
    seconds: float = 0.0
    guard_events: int = 0     # degenerate or underflowing truncation intervals
    violations: int = 0       # retained latent states inconsistent with y
    extra: dict = field(default_factory=dict)

    @property
    def mean_a(self):
        return self.a.mean(axis=0)

    @property
    def mean_delta_sigma(self):
        return self.delta_sigma.mean(axis=0)

    def point_estimate(self):
        return ModelParams(self.mean_a, self.mean_delta_sigma)

    def split_half(self):
        """Difference of the two half-chain means of ``a`` in pooled standard
        errors (naive, ignores autocorrelation)."""
        S = self.a.shape[0]
        h1, h2 = self.a[: S // 2], self.a[S // 2:]
        se = np.sqrt(h1.var(axis=0, ddof=1) / len(h1) + h2.var(axis=0, ddof=1) / len(h2))
        return np.abs(h1.mean(axis=0) - h2.mean(axis=0)) / np.maximum(se, 1e-300)


def truncated_normal(mean, sd, lower, upper, rng, size=None, return_flags=False):
    """Normal(mean, sd) restricted to (lower, upper) by inverse CDF.

    Intervals narrower than 1e-12 yield the midpoint; ``return_flags`` also
    returns the per-draw flag (0 regular, 1 degenerate, 2 tail approximation).
    """
    shape = np.broadcast(np.asarray(mean), np.asarray(sd), np.asarray(lower),
                         np.asarray(upper)).shape if size is None else size
    mean, sd, lower, upper = (np.broadcast_to(np.asarray(v, dtype=np.float64), shape).ravel()
                              for v in (mean, sd, lower, upper))
    if np.any(~(sd > 0)):
        raise ValueError("sd must be positive")
    if np.any(upper < lower):
        raise ValueError("upper bound below lower bound")
    w = rng.random(mean.size)
    x, flags = kernels.trunc_normal(np.ascontiguousarray(mean), np.ascontiguousarray(sd),
                                    np.ascontiguousarray(lower), np.ascontiguousarray(upper), w)
    x = x.reshape(shape)
    if not shape:
        x = float(x)
    if return_flags:
        return x, flags.reshape(shape)
    return x


def _initial_latent(y, k):
    du = np.full((y.shape[0], k), -0.5)
    chosen = y > 0
    du[np.nonzero(chosen)[0], y[chosen] - 1] = 0.5
    return du


def gibbs_fit(data: ChoiceDataset, config: Optional[GibbsConfig] = None, threads=None):
    config = config or GibbsConfig()
    d, p, n = data.d, data.p, data.n
    if d > MAX_ALTERNATIVES:
        raise ValueError(
            f"the Gibbs baseline is limited to d <= {MAX_ALTERNATIVES} (got {d}); "
            "its per-sweep cost grows too quickly beyond that")
    config.validate(d)
    _accel.set_threads(threads)
    k = d - 1
    dX = np.ascontiguousarray(data.dX)            # (n, k, p)
    y = np.ascontiguousarray(data.y)
    prior_prec = config.prior_precision * np.eye(p)
    df_post = config.df(d) + n
    XtX_cache = np.einsum("nji,nlm->jlim", dX, dX)  # for the weighted cross-products

    du = _initial_latent(y, k)
    a = np.zeros(p)
    sigma = np.eye(k)
    kept_a, kept_s = [], []
    events = 0
    violations = 0
    t0 = time.perf_counter()
    for it in range(config.iterations):
        rng = stream(config.seed, STREAM_GIBBS, it)
        prec = np.linalg.inv(sigma)
        prec = 0.5 * (prec + prec.T)
        mean = dX @ a
        w = rng.random((n, k))
        events += int(kernels.gibbs_latent_sweep(du, np.ascontiguousarray(mean), prec, y, w).sum())
        if config.debug and np.any(choice_index(du, space="diff") != y):
            raise AssertionError(f"latent draws inconsistent with choices at iteration {it}")

        # a | du, sigma: sum_i dX_i^T P dX_i = sum_{j,l} P_jl (dX_j^T dX_l)
        post_prec = prior_prec + np.einsum("jl,jlim->im", prec, XtX_cache)
        rhs = np.einsum("nji,jl,nl->i", dX, prec, du)
        F = cholesky(post_prec)
        a_mean = np.linalg.solve(post_prec, rhs)
        a = a_mean + np.linalg.solve(F.T, rng.standard_normal(p))

        # sigma | du, a
        resid = du - dX @ a
        scale = np.eye(k) + resid.T @ resid
        if k == 1:
            sigma = np.atleast_2d(stats.invgamma.rvs(0.5 * df_post, scale=0.5 * scale[0, 0],
                                                     random_state=rng))
        else:
            sigma = np.atleast_2d(stats.invwishart.rvs(df=df_post, scale=scale, random_state=rng))
        sigma = 0.5 * (sigma + sigma.T)

        if it >= config.burn_in and (it - config.burn_in) % config.thinning == 0:
            c = k / np.trace(sigma)
            kept_a.append(a * np.sqrt(c))
            kept_s.append(sigma * c)
            violations += int(np.sum(choice_index(du, space="diff") != y))

    return PosteriorDraws(
        a=np.array(kept_a),
        delta_sigma=np.array(kept_s),
        seconds=time.perf_counter() - t0,
        guard_events=events,
        violations=violations,
    )
