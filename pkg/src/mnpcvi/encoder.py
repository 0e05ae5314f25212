"""Amortised Gaussian encoder q(u | y, X).

Input row for observation i is ``[y_i one-hot, X_i flattened row-major]``.
Three linear heads on top of the hidden stack give the mean (d), the raw
diagonal of D (d, through softplus) and the strict-lower entries of the unit
lower-triangular L (d(d-1)/2, row-major); the covariance is ``L D L^T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .numerics import mvn_sample, softplus_inv


class EncoderError(FloatingPointError):
    def __init__(self, layer, cause):
        self.layer = layer
        super().__init__(f"encoder layer {layer}: {cause}")


@dataclass(frozen=True)
class EncoderConfig:
    d: int
    p: int
    hidden_layers: int = 2
    hidden_width: int = 128
    activation: str = "softplus"

    def __post_init__(self):
        if self.d < 2 or self.p < 1:
            raise ValueError("need d >= 2 and p >= 1")
        if self.hidden_layers < 0 or self.hidden_width < 1:
            raise ValueError("bad hidden layer sizes")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self):
        return self.d + self.d * self.p

    @property
    def n_strict(self):
        return self.d * (self.d - 1) // 2

    @property
    def output_dim(self):
        return 2 * self.d + self.n_strict

    def layer_shapes(self):
        dims = [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def layout(self):
        """``[(name, offset, shape), ...]`` for the flat parameter vector."""
        out, off = [], 0
        for j, (fi, fo) in enumerate(self.layer_shapes()):
            out.append((f"W{j}", off, (fi, fo)))
            off += fi * fo
            out.append((f"b{j}", off, (fo,)))
            off += fo
        return out

    @property
    def size(self):
        return sum(int(np.prod(s)) for _, _, s in self.layout())


_ACTIVATIONS = {"softplus": ad.softplus}


def init_params(cfg: EncoderConfig, rng):
    """Glorot-uniform weights, zero biases except the diagonal head at
    softplus^-1(1) so the initial covariance is close to the identity."""
    xi = np.zeros(cfg.size)
    for name, off, shape in cfg.layout():
        if name.startswith("W"):
            fi, fo = shape
            lim = np.sqrt(6.0 / (fi + fo))
            xi[off:off + fi * fo] = rng.uniform(-lim, lim, size=fi * fo)
    _, off, _ = cfg.layout()[-1]
    xi[off + cfg.d:off + 2 * cfg.d] = softplus_inv(1.0)
    return xi


def encoder_inputs(Y, X):
    """Rows ``[y, vec(X)]``; Y is (n, d) one-hot, X is (n, d, p)."""
    Y = np.asarray(Y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([Y, X.reshape(X.shape[0], -1)], axis=1)


def forward_heads(xi, cfg: EncoderConfig, inputs):
    """Differentiable forward pass; ``xi`` may be an autodiff Var.

    Returns ``(mu, dvec, strict)``: means (n, d), positive diagonal (n, d) and
    strict-lower entries of L (n, d(d-1)/2).
    """
    act = _ACTIVATIONS[cfg.activation]
    h = inputs
    layout = cfg.layout()
    n_layers = len(layout) // 2
    for j in range(n_layers):
        (_, ow, sw), (_, ob, sb) = layout[2 * j], layout[2 * j + 1]
        W = ad.reshape(ad.take(xi, slice(ow, ow + sw[0] * sw[1])), sw)
        b = ad.take(xi, slice(ob, ob + sb[0]))
        try:
            h = ad.affine(h, W, b)
            if j < n_layers - 1:
                h = act(h)
        except ad.NonFiniteError as exc:
            raise EncoderError(j, exc) from None
    d = cfg.d
    try:
        mu = ad.take(h, (slice(None), slice(0, d)))
        dvec = ad.softplus(ad.take(h, (slice(None), slice(d, 2 * d))))
    except ad.NonFiniteError as exc:
        raise EncoderError(n_layers - 1, exc) from None
    strict = ad.take(h, (slice(None), slice(2 * d, None)))
    return mu, dvec, strict


@dataclass(frozen=True)
class EncoderOutput:
    mu: np.ndarray    # (n, d)
    D: np.ndarray     # (n, d) diagonal of D
    L: np.ndarray     # (n, d, d) unit lower triangular

    @property
    def sigma(self):
        return np.einsum("nij,nj,nkj->nik", self.L, self.D, self.L)

    @property
    def factor(self):
        """``L D^{1/2}``, a square root of ``sigma``."""
        return self.L * np.sqrt(self.D)[:, None, :]


def encode(xi, cfg: EncoderConfig, Y, X):
    mu, dvec, strict = forward_heads(np.asarray(xi, dtype=np.float64), cfg, encoder_inputs(Y, X))
    L = ad.unit_lower(strict, cfg.d)
    return EncoderOutput(mu, dvec, L)


def sample_utilities(out: EncoderOutput, z):
    """Reparameterised draws ``mu + L D^{1/2} z`` for z of shape (n, L, d)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or z.shape[0] != out.mu.shape[0] or z.shape[1] < 1:
        raise ValueError(f"z must have shape (n, L>=1, d), got {z.shape}")
    return mvn_sample(out.mu[:, None, :], out.factor[:, None, :, :], z)


def sample_utilities_graph(mu, dvec, strict, z, d):
    """Graph version of :func:`sample_utilities` on the raw heads."""
    L = ad.unit_lower(strict, d)
    F = ad.mul(L, ad.reshape(ad.sqrt(dvec), (-1, 1, d)))
    # (n, L, d): u = mu + z F^T
    zF = ad.matmul(z, ad.transpose(F))
    return ad.add(zF, ad.reshape(mu, (-1, 1, d)))

