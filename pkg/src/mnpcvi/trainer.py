"""Minibatch stochastic optimisation of the encoder and model parameters."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import _accel
from .encoder import EncoderConfig, init_params
from .loss import Batch, LossBreakdown, ParamLayout, loss_for_batch, observation_noise
from .model import ChoiceDataset, ModelParams, delta_sigma_from_raw, n_cov_raw
from .numerics import STREAM_INIT, STREAM_SHUFFLE, cholesky, softplus_inv, stream
from .surrogates import SurrogateScheme


class TrainingError(FloatingPointError):
    """Optimisation hit a non-finite value; ``diagnostics`` says where."""

    def __init__(self, message, diagnostics):
        self.diagnostics = diagnostics
        super().__init__(message)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta_start: float = 0.1
    beta_end: float = 0.01
    batch_size: int = 500
    n_samples: Optional[int] = None   # None: 20 if d <= 3 else 100
    max_epochs: int = 50
    window: int = 200
    tol: float = 1e-3
    seed: int = 0
    hidden_layers: int = 2
    hidden_width: int = 128
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    debug: bool = False

    def validate(self, n=None):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.beta_end <= self.beta_start:
            raise ValueError("need 0 < beta_end <= beta_start")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.n_samples is not None and self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.window < 1 or not self.tol > 0:
            raise ValueError("window must be >= 1 and tol > 0")

    def samples_for(self, d):
        if self.n_samples is not None:
            return self.n_samples
        return 20 if d <= 3 else 100


def anneal(beta_start, beta_end, epoch, total_epochs):
    """Geometric interpolation from ``beta_start`` (epoch 0) to ``beta_end``
    (epoch ``total_epochs - 1``)."""
    if total_epochs < 1:
        raise ValueError("total_epochs must be at least 1")
    if total_epochs == 1:
        return float(beta_start)
    t = min(max(epoch, 0), total_epochs - 1) / (total_epochs - 1)
    return float(beta_start * (beta_end / beta_start) ** t)


def sample_batch(n, m, rng):
    """``m`` distinct indices from ``0..n-1``, uniformly without replacement."""
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    return np.sort(rng.choice(n, size=m, replace=False))


def epoch_batches(n, m, rng):
    """Shuffle once and cut into ``n // m`` batches of exactly ``m``."""
    perm = rng.permutation(n)
    return [np.sort(perm[j * m:(j + 1) * m]) for j in range(n // m)]


def windowed_change(values, window):
    """Relative change between the means of the last two windows, or None."""
    if len(values) < 2 * window:
        return None
    last = float(np.mean(values[-window:]))
    prev = float(np.mean(values[-2 * window:-window]))
    return abs(last - prev) / max(abs(prev), 1e-300)


class Adam:
    def __init__(self, size, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


TRACE_COLUMNS = ("step", "epoch", "l1", "l2", "total", "beta", "seconds")


@dataclass
class LossTrace:
    step: list = field(default_factory=list)
    epoch: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    total: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, step, epoch, br: LossBreakdown, beta, seconds):
        self.step.append(step)
        self.epoch.append(epoch)
        self.l1.append(br.l1)
        self.l2.append(br.l2)
        self.total.append(br.total)
        self.beta.append(beta)
        self.seconds.append(seconds)

    def __len__(self):
        return len(self.step)

    def to_csv(self, include_time=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(*(getattr(self, c) for c in TRACE_COLUMNS)):
            row = list(row)
            if not include_time:
                row[-1] = 0.0
            w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValueError("not a loss trace CSV")
        tr = cls()
        for r in rows[1:]:
            tr.step.append(int(r[0]))
            tr.epoch.append(int(r[1]))
            for name, v in zip(TRACE_COLUMNS[2:], r[2:]):
                getattr(tr, name).append(float(v))
        return tr


@dataclass
class FitResult:
    method: str
    params: ModelParams          # delta_sigma trace-normalised
    n: int
    d: int
    p: int
    seconds: float
    scheme: Optional[str] = None
    nu: Optional[np.ndarray] = None      # full optimiser vector (cvi)
    encoder: Optional[dict] = None       # EncoderConfig fields (cvi)
    trace: Optional[LossTrace] = None
    converged: bool = False
    epochs: int = 0
    steps: int = 0
    clamped_per_epoch: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def initial_params(layout: ParamLayout, seed):
    """Encoder at its Glorot initialisation, a = 0 and Delta Sigma = I."""
    xi = init_params(layout.encoder, stream(seed, STREAM_INIT, 0))
    k = layout.d - 1
    rows, cols = np.tril_indices(k)
    raw = np.where(rows == cols, softplus_inv(1.0), 0.0)
    assert raw.size == n_cov_raw(layout.d)
    return np.concatenate([xi, np.zeros(layout.p), raw])


def unpack(nu, layout: ParamLayout):
    a = np.array(nu[layout.a])
    S = delta_sigma_from_raw(np.asarray(nu[layout.cov]), layout.d)
    return ModelParams(a, S).normalized()


def fit(data: ChoiceDataset, scheme="combined", config: Optional[TrainConfig] = None,
        threads=None, callback=None):
    """Train the encoder and the model parameters on ``data``."""
    config = config or TrainConfig()
    config.validate()
    scheme = SurrogateScheme.parse(scheme)
    _accel.set_threads(threads)
    n, d, p = data.n, data.d, data.p
    m = min(config.batch_size, n)
    L = config.samples_for(d)
    enc = EncoderConfig(d, p, config.hidden_layers, config.hidden_width)
    layout = ParamLayout(enc)
    nu = initial_params(layout, config.seed)
    opt = Adam(nu.size, config.learning_rate, config.adam_b1, config.adam_b2, config.adam_eps)
    inputs_all = Batch.from_dataset(data)

    trace = LossTrace()
    clamps = []
    converged = False
    step = 0
    t0 = time.perf_counter()
    epoch = -1
    for epoch in range(config.max_epochs):
        beta = anneal(config.beta_start, config.beta_end, epoch, config.max_epochs)
        batches = epoch_batches(n, m, stream(config.seed, STREAM_SHUFFLE, epoch))
        n_clamped = 0
        for idx in batches:
            batch = Batch(inputs_all.inputs[idx], inputs_all.y[idx], inputs_all.dX[idx])
            z, g = observation_noise(config.seed, epoch, idx, L, d, scheme.uses_noise)
            try:
                br, gr = loss_for_batch(nu, layout, batch, z, g, beta, scheme.code, n)
            except FloatingPointError as exc:
                raise TrainingError(
                    f"non-finite value at step {step} (epoch {epoch}): {exc}",
                    {"step": step, "epoch": epoch, "beta": beta, "error": str(exc),
                     "a": nu[layout.a].tolist(), "cov_raw": nu[layout.cov].tolist()},
                ) from None
            if not (math.isfinite(br.total) and np.all(np.isfinite(gr))):
                raise TrainingError(
                    f"non-finite loss at step {step} (epoch {epoch})",
                    {"step": step, "epoch": epoch, "beta": beta, "l1": br.l1, "l2": br.l2},
                )
            nu = opt.step(nu, gr)
            if config.debug:
                cholesky(delta_sigma_from_raw(nu[layout.cov], d))
            n_clamped += br.clamped
            trace.append(step, epoch, br, beta, time.perf_counter() - t0)
            step += 1
            if windowed_change(trace.total, config.window) is not None and \
                    windowed_change(trace.total, config.window) < config.tol:
                converged = True
                break
        clamps.append(int(n_clamped))
        if callback is not None:
            callback(epoch, trace, nu)
        if converged:
            break

    seconds = time.perf_counter() - t0
    return FitResult(
        method="cvi",
        params=unpack(nu, layout),
        n=n, d=d, p=p,
        seconds=seconds,
        scheme=scheme.value,
        nu=nu,
        encoder=asdict(enc),
        trace=trace,
        converged=converged,
        epochs=epoch + 1,
        steps=step,
        clamped_per_epoch=clamps,
        config=asdict(config),
    )
