"""Dense linear algebra and random streams shared by the rest of the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-10


class DecompositionError(np.linalg.LinAlgError):
    """Raised when a matrix that must be positive definite is not.

    ``pivot`` is the 1-based index of the first non-positive pivot.
    """

    def __init__(self, pivot, value=None):
        self.pivot = pivot
        self.value = value
        msg = f"matrix is not positive definite: pivot {pivot}"
        if value is not None:
            msg += f" has value {value:.6g}"
        super().__init__(msg)


def symmetrize(S):
    S = np.asarray(S, dtype=np.float64)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def ldl_decompose(S):
    """Factor a symmetric positive-definite matrix as ``L @ diag(D) @ L.T``.

    Returns the unit lower-triangular ``L`` and the diagonal as a full matrix
    ``D``.  The input is symmetrised first; asymmetry beyond ``1e-10``
    (relative) is rejected.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    S = symmetrize(S)
    k = S.shape[0]
    L = np.eye(k)
    d = np.zeros(k)
    for j in range(k):
        d[j] = S[j, j] - np.dot(L[j, :j] ** 2, d[:j])
        if not d[j] > 0.0:
            raise DecompositionError(j + 1, d[j])
        for i in range(j + 1, k):
            L[i, j] = (S[i, j] - np.dot(L[i, :j] * L[j, :j], d[:j])) / d[j]
    return L, np.diag(d)


def ldl_factor(S):
    """Square-root factor ``L @ sqrt(D)`` so that ``F @ F.T == S``."""
    L, D = ldl_decompose(S)
    return L * np.sqrt(np.diag(D))[None, :]


def cholesky(S):
    """Lower Cholesky factor with a pivot-naming error on failure."""
    S = symmetrize(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        # np.linalg does not say where it failed; the LDL pass does
        ldl_decompose(S)
        raise


def mvn_sample(mean, factor, z):
    """Reparameterised Gaussian draw ``mean + factor @ z``.

    ``z`` may carry extra leading axes; the last axis is the dimension.
    """
    mean = np.asarray(mean, dtype=np.float64)
    factor = np.asarray(factor, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    k = mean.shape[-1]
    if factor.shape[-2:] != (k, k) or z.shape[-1] != k:
        raise ValueError(
            f"dimension mismatch: mean {mean.shape}, factor {factor.shape}, z {z.shape}"
        )
    return mean + np.einsum("...ij,...j->...i", factor, z)


def logdet_spd(S):
    """log|S| from a Cholesky factorisation (batched over leading axes)."""
    G = np.linalg.cholesky(symmetrize(S))
    return 2.0 * np.sum(np.log(np.diagonal(G, axis1=-2, axis2=-1)), axis=-1)


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def tril_pairs(k, strict=True):
    """Row-major (row, col) index arrays of the lower triangle of a k x k matrix."""
    rows, cols = np.tril_indices(k, -1 if strict else 0)
    return rows, cols


# Counter-based streams -------------------------------------------------------

# Fixed tags keep substreams of different purposes apart.
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_NOISE = 3
STREAM_SIM = 4
STREAM_GIBBS = 5
STREAM_EVAL = 6
STREAM_BOOT = 7
STREAM_SPLIT = 8

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A Philox stream keyed by ``(seed, stream_id)``.

    Philox is counter based, so a draw sequence depends only on the key and
    never on which worker asks for it.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        key = (int(self.seed) & _MASK64) | ((int(self.stream_id) & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, tag, index=0):
        return RngStream(self.seed, substream_id(tag, index))


def substream_id(tag, index=0):
    """Pack a purpose tag and a counter (e.g. step, replicate) into 64 bits."""
    if index < 0 or index >= 1 << 48:
        raise ValueError("substream index out of range")
    return (int(tag) << 48) | int(index)


def stream(seed, tag, index=0):
    """Shorthand for ``RngStream(seed, substream_id(tag, index)).generator()``."""
    return RngStream(seed, substream_id(tag, index)).generator()


def gumbel_from_uniform(U):
    U = np.clip(U, 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(U))
