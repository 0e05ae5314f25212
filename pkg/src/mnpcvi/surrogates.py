"""Differentiable stand-ins for the argmax decoder.

Three schemes:

* ``ste``: one-hot argmax forward, softmax(u / beta) backward, no noise.
* ``gumbel``: Gumbel-softmax in both passes.
* ``combined``: one-hot argmax forward, Gumbel-softmax backward, with the same
  noise draw used for both.
"""
from __future__ import annotations

import enum

import numpy as np

from . import kernels
from .model import choice_index
from .numerics import gumbel_from_uniform


class SurrogateScheme(enum.Enum):
    STE = "ste"
    GUMBEL = "gumbel"
    COMBINED = "combined"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown scheme {value!r}; expected one of {names}") from None

    @property
    def code(self):
        return {SurrogateScheme.STE: kernels.STE,
                SurrogateScheme.GUMBEL: kernels.GUMBEL,
                SurrogateScheme.COMBINED: kernels.COMBINED}[self]

    @property
    def uses_noise(self):
        return self is not SurrogateScheme.STE

    @property
    def hard_forward(self):
        return self is not SurrogateScheme.GUMBEL


def gumbel_noise(rng, shape):
    return gumbel_from_uniform(rng.random(shape))


def gumbel_softmax(u, g, beta):
    """``softmax((u + g) / beta)`` along the last axis."""
    if not beta > 0:
        raise ValueError("temperature must be positive")
    s = (np.asarray(u, dtype=np.float64) + np.asarray(g, dtype=np.float64)) / beta
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_jacobian(p, beta):
    # d softmax(v / beta) / d v
    eye = np.eye(p.shape[-1])
    return (p[..., :, None] * eye - p[..., :, None] * p[..., None, :]) / beta


def decode(u, scheme, beta, g=None):
    """Forward value of the decoder and the Jacobian used when
    back-propagating through it.

    Returns ``(forward, jac)`` with ``jac[..., j, k] = d y_j / d u_k`` of the
    smooth surrogate.
    """
    scheme = SurrogateScheme.parse(scheme)
    u = np.asarray(u, dtype=np.float64)
    if scheme.uses_noise:
        if g is None:
            raise ValueError(f"scheme {scheme.value!r} needs Gumbel noise")
        soft = gumbel_softmax(u, g, beta)
    else:
        soft = gumbel_softmax(u, np.zeros_like(u), beta)
    if scheme.hard_forward:
        forward = np.eye(u.shape[-1])[choice_index(u)]
    else:
        forward = soft
    return forward, _softmax_jacobian(soft, beta)
