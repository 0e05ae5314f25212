"""Multinomial probit building blocks: data, parameters, differencing and the
trace restriction.

Alternatives are 0-based internally with alternative 0 as the baseline; files
use 1-based indices (see ``io``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softplus, softplus_inv, symmetrize


@dataclass(frozen=True)
class ChoiceDataset:
    """``n`` observations of a (d, p) design matrix and a chosen alternative."""

    X: np.ndarray  # (n, d, p)
    y: np.ndarray  # (n,) int, 0-based

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 3:
            raise ValueError(f"X must have shape (n, d, p), got {X.shape}")
        n, d, p = X.shape
        if n < 1 or d < 2 or p < 1:
            raise ValueError(f"need n >= 1, d >= 2, p >= 1; got {(n, d, p)}")
        if y.shape != (n,):
            raise ValueError(f"y must have shape ({n},), got {y.shape}")
        if np.any(y < 0) or np.any(y >= d):
            raise ValueError("choices must lie in 0..d-1")
        if not np.all(np.isfinite(X)):
            raise ValueError("design matrices contain non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def p(self):
        return self.X.shape[2]

    @property
    def Y(self):
        """One-hot choices, (n, d)."""
        return np.eye(self.d)[self.y]

    @property
    def dX(self):
        return difference_design(self.X)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ChoiceDataset(self.X[idx], self.y[idx])


@dataclass(frozen=True)
class ModelParams:
    """Taste vector ``a`` and differenced covariance ``delta_sigma``."""

    a: np.ndarray
    delta_sigma: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).copy()
        S = symmetrize(self.delta_sigma)
        if a.ndim != 1 or S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("a must be a vector and delta_sigma square")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "delta_sigma", S)

    @property
    def d(self):
        return self.delta_sigma.shape[0] + 1

    @property
    def p(self):
        return self.a.shape[0]

    def normalized(self):
        return ModelParams(self.a, trace_normalize(self.delta_sigma))

    def vector(self):
        """Parameters scored by RMSE: ``a`` then the row-major lower triangle
        (diagonal included) of the trace-normalised covariance."""
        S = trace_normalize(self.delta_sigma)
        rows, cols = np.tril_indices(S.shape[0])
        return np.concatenate([self.a, S[rows, cols]])

    @classmethod
    def from_raw(cls, a, raw, d):
        return cls(a, delta_sigma_from_raw(raw, d))

    def to_raw(self):
        return raw_from_delta_sigma(self.delta_sigma)


# parameterisation of the differenced covariance -------------------------------

def n_cov_raw(d):
    return (d - 1) * d // 2


def delta_sigma_from_raw(raw, d):
    """``G G^T`` where ``G`` is filled row-major from ``raw`` (lower triangle,
    diagonal included) with softplus applied on the diagonal."""
    k = d - 1
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (n_cov_raw(d),):
        raise ValueError(f"expected {n_cov_raw(d)} covariance parameters, got {raw.shape}")
    rows, cols = np.tril_indices(k)
    G = np.zeros((k, k))
    G[rows, cols] = np.where(rows == cols, softplus(raw), raw)
    return G @ G.T


def raw_from_delta_sigma(S):
    G = np.linalg.cholesky(symmetrize(S))
    rows, cols = np.tril_indices(G.shape[0])
    vals = G[rows, cols]
    return np.where(rows == cols, softplus_inv(np.maximum(vals, 1e-300)), vals)


# differencing --------------------------------------------------------------

@dataclass(frozen=True)
class DifferenceOperator:
    """The (d-1) x d matrix subtracting the baseline alternative."""

    d: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("need at least two alternatives")

    @property
    def matrix(self):
        return np.hstack([-np.ones((self.d - 1, 1)), np.eye(self.d - 1)])

    def apply(self, v):
        """``C @ v`` along the alternative axis (axis -2 for matrices, -1 for vectors)."""
        v = np.asarray(v, dtype=np.float64)
        return v[..., 1:] - v[..., :1]


def difference_design(X):
    """Rows ``X[j] - X[0]`` for j = 1..d-1; works on (d, p) or (n, d, p)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-2] < 2:
        raise ValueError("need at least two alternatives")
    return X[..., 1:, :] - X[..., :1, :]


def difference_gaussian(mu, Sigma):
    """Image of N(mu, Sigma) under the difference operator."""
    mu = np.asarray(mu, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    C = DifferenceOperator(mu.shape[-1]).matrix
    return mu[..., 1:] - mu[..., :1], C @ Sigma @ C.T


def trace_normalize(S):
    """Rescale so the trace equals the matrix dimension (d - 1)."""
    S = np.asarray(S, dtype=np.float64)
    tr = np.trace(S, axis1=-2, axis2=-1)
    if np.any(~(tr > 0)):
        raise ValueError("trace must be positive")
    k = S.shape[-1]
    return S * (k / tr)[..., None, None]


def correlation(S):
    s = np.sqrt(np.diagonal(S, axis1=-2, axis2=-1))
    return S / (s[..., :, None] * s[..., None, :])


# choice rule --------------------------------------------------------------

def choose(u, space="full", tie_tol=0.0):
    """One-hot choice for utilities ``u`` (last axis).

    ``space="full"``: the maximal entry wins.  ``space="diff"``: ``u`` holds
    differenced utilities; the baseline wins when no difference is positive,
    otherwise 1 + argmax.  Entries within ``tie_tol`` of the maximum count as
    tied and the lowest index wins.
    """
    u = np.asarray(u, dtype=np.float64)
    idx = choice_index(u, space, tie_tol)
    d = u.shape[-1] + (1 if space == "diff" else 0)
    return np.eye(d)[idx]


def choice_index(u, space="full", tie_tol=0.0):
    u = np.asarray(u, dtype=np.float64)
    if space == "diff":
        u = np.concatenate([np.zeros(u.shape[:-1] + (1,)), u], axis=-1)
    elif space != "full":
        raise ValueError(f"unknown utility space {space!r}")
    top = u.max(axis=-1, keepdims=True)
    return np.argmax(u >= top - tie_tol, axis=-1)


def rmse(estimate, truth):
    e = estimate.vector() if isinstance(estimate, ModelParams) else np.asarray(estimate)
    t = truth.vector() if isinstance(truth, ModelParams) else np.asarray(truth)
    if e.shape != t.shape:
        raise ValueError(f"parameter shapes differ: {e.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((e - t) ** 2)))
