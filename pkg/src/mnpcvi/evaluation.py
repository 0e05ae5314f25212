"""Predictive metrics, Monte-Carlo choice probabilities and the bootstrap."""
from __future__ import annotations

import concurrent.futures as cf
import multiprocessing as mp
import time
import traceback
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .model import ChoiceDataset, ModelParams, rmse as _rmse
from .numerics import STREAM_BOOT, STREAM_EVAL, STREAM_SPLIT, cholesky, stream

DEFAULT_DRAWS = 10_000


def choice_probabilities(params: ModelParams, dX, R=DEFAULT_DRAWS, seed=0, rng=None):
    """Frequency estimate of the choice probabilities under ``params``.

    ``dX`` is one (d-1, p) differenced design or a stack (n, d-1, p).  The
    same R draws are shared by every observation (common random numbers) and
    tallies are smoothed as ``(count + 1/2) / (R + d/2)``.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    params = params.normalized()
    dX = np.asarray(dX, dtype=np.float64)
    single = dX.ndim == 2
    if single:
        dX = dX[None]
    k = dX.shape[1]
    if k != params.d - 1 or dX.shape[2] != params.p:
        raise ValueError(f"design shape {dX.shape[1:]} does not match parameters "
                         f"({params.d - 1}, {params.p})")
    rng = rng if rng is not None else stream(seed, STREAM_EVAL, 0)
    eps = rng.standard_normal((R, k)) @ cholesky(params.delta_sigma).T
    mean = np.ascontiguousarray(dX @ params.a)
    counts = kernels.choice_counts(mean, np.ascontiguousarray(eps))
    probs = (counts + 0.5) / (R + 0.5 * (k + 1))
    return probs[0] if single else probs


@dataclass
class MetricReport:
    hit_rate: float
    log_score: float
    brier_score: float
    rmse: Optional[float] = None
    sample_tag: str = "in-sample"
    n: int = 0

    def as_dict(self):
        return asdict(self)

    def to_text(self):
        lines = []
        for key, val in self.as_dict().items():
            if val is None:
                continue
            lines.append(f"{key}={val!r}" if isinstance(val, float) else f"{key}={val}")
        return "\n".join(lines) + "\n"


def score(probs, y):
    """``(hit_rate, log_score, brier)`` for probability rows against 0-based y."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y)
    n, d = probs.shape
    pred = np.argmax(probs, axis=1)
    onehot = np.eye(d)[y]
    hit = float(np.mean(pred == y))
    with np.errstate(divide="ignore"):
        log_score = float(np.mean(np.log(probs[np.arange(n), y])))
    brier = float(np.mean(np.linalg.norm(probs - onehot, axis=1)))
    return hit, log_score, brier


def metrics(data: ChoiceDataset, params: ModelParams, truth: Optional[ModelParams] = None,
            R=DEFAULT_DRAWS, seed=0, sample_tag="in-sample"):
    if sample_tag not in ("in-sample", "out-of-sample"):
        raise ValueError(f"unknown sample tag {sample_tag!r}")
    probs = choice_probabilities(params, data.dX, R=R, seed=seed)
    hit, log_score, brier = score(probs, data.y)
    r = _rmse(params, truth) if truth is not None else None
    return MetricReport(hit, log_score, brier, r, sample_tag, data.n)


def split(n, seed=0, train_fraction=0.8):
    """Random 80/20 partition of ``0..n-1`` (both parts sorted)."""
    perm = stream(seed, STREAM_SPLIT, 0).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


# bootstrap --------------------------------------------------------------------------

@dataclass
class BootstrapResult:
    replicates: list                 # ModelParams per successful replicate, in order
    indices: list                    # replicate numbers of the successes
    failures: dict = field(default_factory=dict)   # replicate -> error text
    seconds: float = 0.0
    replicate_seconds: list = field(default_factory=list)

    @property
    def R(self):
        return len(self.replicates) + len(self.failures)

    @property
    def flagged(self):
        return bool(self.failures)

    def vectors(self):
        return np.array([r.vector() for r in self.replicates])

    @property
    def mean(self):
        return self.vectors().mean(axis=0)

    @property
    def std(self):
        V = self.vectors()
        return V.std(axis=0, ddof=1) if len(V) > 1 else np.zeros(V.shape[1])

    def coverage(self, truth: ModelParams, width=2.0):
        """Fraction of parameters whose truth lies within ``width`` bootstrap
        standard deviations of the bootstrap mean."""
        return float(np.mean(np.abs(self.mean - truth.vector()) <= width * self.std))


def resample_indices(n, seed, r):
    return stream(seed, STREAM_BOOT, r).integers(0, n, size=n)


def _replicate(args):
    X, y, scheme, config, seed, r, numba_threads = args
    from .trainer import fit

    t0 = time.perf_counter()
    idx = resample_indices(X.shape[0], seed, r)
    data = ChoiceDataset(X[idx], y[idx])
    res = fit(data, scheme, config, threads=numba_threads)
    return res.params, time.perf_counter() - t0


def bootstrap(data: ChoiceDataset, scheme="combined", config=None, R=20, seed=0, workers=1,
              resample_seeds=None):
    """Refit on ``R`` resamples drawn with replacement.

    Replicate ``r`` resamples with ``stream(seed, BOOT, resample_seeds[r])``
    (default ``r``).  Replicates run in ``workers`` processes; a failing
    replicate is recorded and excluded.
    """
    if R < 2:
        raise ValueError("R must be at least 2")
    from .trainer import TrainConfig

    config = config or TrainConfig()
    keys = list(range(R)) if resample_seeds is None else [int(s) for s in resample_seeds]
    if len(keys) != R:
        raise ValueError("need one resample seed per replicate")
    X, y = np.asarray(data.X), np.asarray(data.y)
    jobs = [(X, y, scheme, config, seed, key, 1 if workers > 1 else None) for key in keys]
    results = [None] * R
    failures = {}
    t0 = time.perf_counter()
    if workers <= 1:
        for r, job in enumerate(jobs):
            try:
                results[r] = _replicate(job)
            except Exception:  # noqa: BLE001 - any failure is recorded
                failures[r] = traceback.format_exc(limit=2)
    else:
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futs = {pool.submit(_replicate, job): r for r, job in enumerate(jobs)}
            for fut in cf.as_completed(futs):
                r = futs[fut]
                try:
                    results[r] = fut.result()
                except Exception:  # noqa: BLE001
                    failures[r] = traceback.format_exc(limit=2)
    ok = [r for r in range(R) if results[r] is not None]
    return BootstrapResult(
        replicates=[results[r][0] for r in ok],
        indices=ok,
        failures=failures,
        seconds=time.perf_counter() - t0,
        replicate_seconds=[results[r][1] for r in ok],
    )
