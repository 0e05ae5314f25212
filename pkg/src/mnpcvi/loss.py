"""The identified training objective: cross-entropy through the argmax
surrogate plus the closed-form Gaussian KL in the differenced space.

The flat parameter vector is ``nu = [xi, a, cov_raw]`` where ``xi`` are the
encoder weights and ``cov_raw`` parameterises the Cholesky factor of the
differenced covariance (see ``model.delta_sigma_from_raw``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .encoder import EncoderConfig, forward_heads, encoder_inputs, sample_utilities_graph
from .model import DifferenceOperator, n_cov_raw
from .numerics import STREAM_NOISE, cholesky, gumbel_from_uniform, logdet_spd, stream
from .surrogates import SurrogateScheme


@dataclass(frozen=True)
class LossBreakdown:
    l1: float           # sum over the batch of the cross-entropy terms
    l2: float           # sum over the batch of the KL terms
    total: float        # batch_scale * (l1 + l2)
    batch_scale: float  # n / m
    clamped: int = 0    # log evaluations that hit the floor


@dataclass(frozen=True)
class ParamLayout:
    """Segments of the flat vector ``nu``."""

    encoder: EncoderConfig

    @property
    def d(self):
        return self.encoder.d

    @property
    def p(self):
        return self.encoder.p

    @property
    def xi(self):
        return slice(0, self.encoder.size)

    @property
    def a(self):
        s = self.encoder.size
        return slice(s, s + self.p)

    @property
    def cov(self):
        s = self.encoder.size + self.p
        return slice(s, s + n_cov_raw(self.d))

    @property
    def size(self):
        return self.cov.stop

    def segments(self):
        return {"xi": self.xi, "a": self.a, "cov": self.cov}


# closed-form pieces -------------------------------------------------------------

def l2_term(dmu_q, dsigma_q, dxa, sigma_bar):
    """KL( N(dmu_q, dsigma_q) || N(dxa, sigma_bar) ), batched over leading axes.

    ``sigma_bar`` is expected to be trace-normalised already; it may be shared
    across the batch.
    """
    dmu_q = np.atleast_1d(np.asarray(dmu_q, dtype=np.float64))
    dsigma_q = np.asarray(dsigma_q, dtype=np.float64)
    if dsigma_q.ndim < 2:
        dsigma_q = dsigma_q.reshape(dmu_q.shape[:-1] + (1, 1))
    sigma_bar = np.asarray(sigma_bar, dtype=np.float64)
    if sigma_bar.ndim < 2:
        sigma_bar = sigma_bar.reshape(1, 1)
    k = dmu_q.shape[-1]
    cholesky(sigma_bar if sigma_bar.ndim == 2 else sigma_bar[0])
    r = np.asarray(dxa, dtype=np.float64) - dmu_q
    Sb = np.broadcast_to(sigma_bar, dsigma_q.shape)
    quad = np.sum(r * np.linalg.solve(Sb, r[..., None])[..., 0], axis=-1)
    tr = np.trace(np.linalg.solve(Sb, dsigma_q), axis1=-2, axis2=-1)
    return 0.5 * (logdet_spd(sigma_bar) - logdet_spd(dsigma_q) - k + quad + tr)


def l1_term(mu, factor, y, scheme, beta, z, g=None):
    """Monte-Carlo cross-entropy per observation.

    ``mu`` (n, d) and ``factor`` (n, d, d) describe q; ``z`` (n, L, d) are
    standard-normal draws and ``g`` the matching Gumbel noise.  The forward
    value follows the scheme (hard one-hot for ste/combined) with the log
    clamped at 1e-12.  Returns ``(l1 (n,), clamped (n,))``.
    """
    scheme = SurrogateScheme.parse(scheme)
    u = np.asarray(mu)[:, None, :] + np.einsum("nij,nlj->nli", factor, z)
    g = np.zeros_like(u) if g is None else np.asarray(g, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int64)
    loss, _, clamped = kernels.surrogate_ce(np.ascontiguousarray(u), np.ascontiguousarray(g),
                                            y, float(beta), scheme.code)
    return loss, clamped


# noise -----------------------------------------------------------------------------

def observation_noise(seed, epoch, index, L, d, with_gumbel=True):
    """Standard-normal and Gumbel draws for each observation in ``index``.

    Every (epoch, observation) pair owns a substream, so the draws do not
    depend on how observations are grouped into batches.
    """
    index = np.asarray(index, dtype=np.int64)
    z = np.empty((index.size, L, d))
    g = np.zeros((index.size, L, d))
    for j, i in enumerate(index):
        rng = stream(seed, STREAM_NOISE, (int(epoch) << 32) | int(i))
        z[j] = rng.standard_normal((L, d))
        if with_gumbel:
            g[j] = gumbel_from_uniform(rng.random((L, d)))
    return z, g


# graph objective -------------------------------------------------------------------

@dataclass
class Batch:
    inputs: np.ndarray  # (m, d + d*p) encoder rows
    y: np.ndarray       # (m,) 0-based
    dX: np.ndarray      # (m, d-1, p)

    @classmethod
    def from_dataset(cls, data, idx=None):
        sub = data if idx is None else data.subset(idx)
        return cls(encoder_inputs(sub.Y, sub.X), sub.y, sub.dX)

    @property
    def m(self):
        return self.y.shape[0]


def objective(nu, layout: ParamLayout, batch: Batch, z, g, beta, mode, scale):
    """Graph for ``scale * sum_i (l1_i + l2_i)``; ``nu`` may be an autodiff Var.

    ``mode`` is a kernel scheme code (``kernels.STE`` etc., or
    ``kernels.SOFTMAX`` for the surrogate-only STE function).  Returns
    ``(total, aux)`` where aux holds the unscaled sums and the clamp count.
    """
    d, k = layout.d, layout.d - 1
    xi = ad.take(nu, layout.xi)
    a = ad.take(nu, layout.a)
    raw = ad.take(nu, layout.cov)

    mu, dvec, strict = forward_heads(xi, layout.encoder, batch.inputs)
    u = sample_utilities_graph(mu, dvec, strict, z, d)
    ce, nclamp = ad.surrogate_ce(u, g, batch.y, beta, mode)

    # q in the differenced space
    C = DifferenceOperator(d).matrix
    sigma_q = ad.ldl_compose(strict, dvec, d)
    dsigma_q = ad.matmul(ad.matmul(C, sigma_q), C.T)
    dmu = ad.matmul(mu, C.T)

    # model covariance, trace-normalised
    G = ad.chol_factor(raw, k)
    S = ad.matmul(G, ad.transpose(G))
    sbar = ad.mul(S, ad.div(float(k), ad.trace(S)))

    dxa = ad.reshape(ad.matmul(batch.dX, ad.reshape(a, (-1, 1))), (batch.m, k))
    r = ad.sub(dxa, dmu)
    kl = ad.logdet_spd(sbar) - ad.logdet_spd(dsigma_q) - float(k) \
        + ad.inv_quad(sbar, r) + ad.trace_solve(sbar, dsigma_q)
    kl = ad.mul(kl, 0.5)

    l1 = ad.sum(ce)
    l2 = ad.sum(kl)
    total = ad.mul(ad.add(l1, l2), float(scale))
    aux = {"l1": float(ad.value(l1)), "l2": float(ad.value(l2)), "clamped": nclamp}
    return total, aux


def loss_for_batch(nu, layout: ParamLayout, batch: Batch, z, g, beta, mode, n):
    """Value and gradient of the minibatch estimate ``(n/m) sum_i (...)``.

    Returns ``(LossBreakdown, grad)``.
    """
    scale = n / batch.m
    val, gr, aux = ad.grad(
        lambda v: objective(v, layout, batch, z, g, beta, mode, scale), nu, has_aux=True)
    return LossBreakdown(aux["l1"], aux["l2"], val, scale, aux["clamped"]), gr


def evaluate_loss(nu, layout: ParamLayout, batch: Batch, z, g, beta, mode, n):
    """Loss breakdown without the backward pass."""
    scale = n / batch.m
    total, aux = objective(np.asarray(nu, dtype=np.float64), layout, batch, z, g, beta, mode, scale)
    return LossBreakdown(aux["l1"], aux["l2"], float(total), scale, aux["clamped"])
