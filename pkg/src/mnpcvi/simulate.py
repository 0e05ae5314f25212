"""Synthetic choice data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ChoiceDataset, ModelParams, choice_index, difference_design, trace_normalize
from .numerics import STREAM_SIM, cholesky, stream

LAYOUTS = ("paper-3alt", "generic")

# reference three-alternative configuration
REF_A = np.array([0.6, 0.55, 0.9, -0.25, 0.2])
REF_DELTA_SIGMA = np.array([[0.89, 0.31], [0.31, 1.11]])

# nonzero pattern of the three-alternative design: row j lists its columns
_REF_PATTERN = np.array([
    [1, 0, 0, 0, 1],
    [0, 1, 0, 0, 1],
    [0, 0, 1, 1, 1],
], dtype=bool)


def design_width(layout, d):
    if layout == "paper-3alt":
        if d != 3:
            raise ValueError("layout 'paper-3alt' requires d = 3")
        return 5
    if layout == "generic":
        return d + 1
    raise ValueError(f"unknown design layout {layout!r}")


def design_mask(layout, d):
    if layout == "paper-3alt":
        design_width(layout, d)
        return _REF_PATTERN.copy()
    p = design_width(layout, d)
    mask = np.zeros((d, p), dtype=bool)
    mask[np.arange(d), np.arange(d)] = True
    mask[:, -1] = True
    return mask


def build_design(layout, d, rng, n=None):
    """U(0,1) entries on the layout's nonzero pattern, zeros elsewhere.

    Returns one (d, p) matrix, or (n, d, p) when ``n`` is given.
    """
    mask = design_mask(layout, d)
    shape = mask.shape if n is None else (n,) + mask.shape
    return rng.random(shape) * mask


def draw_truth(layout, d, rng):
    """A reproducible ground truth: a ~ U(-1, 1) and a trace-normalised GG^T."""
    p = design_width(layout, d)
    a = rng.uniform(-1.0, 1.0, size=p)
    G = rng.standard_normal((d - 1, d - 1))
    S = trace_normalize(G @ G.T + 1e-8 * np.eye(d - 1))
    return ModelParams(a, S)


@dataclass
class SimConfig:
    d: int = 3
    n: int = 5000
    true_a: Optional[np.ndarray] = None
    true_delta_sigma: Optional[np.ndarray] = None
    seed: int = 0
    design_layout: str = "paper-3alt"

    def resolve_truth(self):
        """The ground truth: given values, the reference block for the
        three-alternative layout, otherwise a draw from the seed."""
        if self.true_a is None and self.true_delta_sigma is None:
            if self.design_layout == "paper-3alt":
                return ModelParams(REF_A, REF_DELTA_SIGMA)
            return draw_truth(self.design_layout, self.d, stream(self.seed, STREAM_SIM, 1))
        if self.true_a is None or self.true_delta_sigma is None:
            raise ValueError("true_a and true_delta_sigma must be given together")
        return ModelParams(self.true_a, self.true_delta_sigma)

    def validate(self):
        if self.d < 2:
            raise ValueError("d must be at least 2")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        p = design_width(self.design_layout, self.d)
        truth = self.resolve_truth()
        if truth.a.shape != (p,):
            raise ValueError(f"true_a must have length {p} for layout {self.design_layout!r}")
        if truth.delta_sigma.shape != (self.d - 1, self.d - 1):
            raise ValueError(f"true_delta_sigma must be {self.d - 1}x{self.d - 1}")
        cholesky(truth.delta_sigma)
        tr = np.trace(truth.delta_sigma)
        if abs(tr - (self.d - 1)) > 1e-8 * (self.d - 1):
            raise ValueError(f"true_delta_sigma must have trace {self.d - 1}, got {tr:.10g}")
        return truth


def simulate(cfg: SimConfig):
    """Draw a dataset from the probit model.  Returns ``(dataset, truth)``."""
    truth = cfg.validate()
    rng = stream(cfg.seed, STREAM_SIM, 0)
    X = build_design(cfg.design_layout, cfg.d, rng, n=cfg.n)
    F = cholesky(truth.delta_sigma)
    eps = rng.standard_normal((cfg.n, cfg.d - 1)) @ F.T
    du = difference_design(X) @ truth.a + eps
    y = choice_index(du, space="diff")
    return ChoiceDataset(X, y), truth
