import numpy as np
import pytest
from scipy.stats import norm

from mnpcvi.evaluation import (BootstrapResult, MetricReport, bootstrap, choice_probabilities,
                               metrics, resample_indices, score, split)
from mnpcvi.model import ChoiceDataset, ModelParams
from mnpcvi.simulate import SimConfig, simulate
from mnpcvi.trainer import TrainConfig


def test_binary_symmetric():
    p = choice_probabilities(ModelParams([0.0], [[1.0]]), np.zeros((1, 1)), R=20_000, seed=1)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert abs(p[0] - 0.5) < 3 * np.sqrt(0.25 / 20_000)


@pytest.mark.parametrize("mu", [-1.3, -0.2, 0.0, 0.7, 2.0])
def test_binary_probit_oracle(mu):
    R = 50_000
    p = choice_probabilities(ModelParams([mu], [[1.0]]), np.ones((1, 1)), R=R, seed=3)
    exact = norm.cdf(mu)
    assert abs(p[1] - exact) < 3 * np.sqrt(exact * (1 - exact) / R) + 0.5 / R


def test_sums_to_one_and_deterministic(rng):
    data, truth = simulate(SimConfig(n=50, seed=1))
    a = choice_probabilities(truth, data.dX, R=1000, seed=9)
    b = choice_probabilities(truth, data.dX, R=1000, seed=9)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-14)
    assert a.tobytes() == b.tobytes()
    assert np.all(a > 0)


def test_smoothing_preserves_argmax(rng):
    data, truth = simulate(SimConfig(n=300, seed=2))
    R = 500
    p = choice_probabilities(truth, data.dX, R=R, seed=4)
    counts = np.rint(p * (R + 1.5) - 0.5).astype(int)
    assert np.all(counts.sum(axis=1) == R)
    np.testing.assert_array_equal(np.argmax(p, axis=1), np.argmax(counts, axis=1))


def test_score_examples():
    y = np.array([0, 2, 1])
    P = np.eye(3)[y]
    hit, log_score, brier = score(P, y)
    assert (hit, log_score, brier) == (1.0, 0.0, 0.0)
    U = np.full((4, 10), 0.1)
    _, ls, brier = score(U, np.array([0, 3, 9, 5]))
    assert brier == pytest.approx(np.sqrt(0.9 ** 2 + 9 * 0.01))
    assert brier == pytest.approx(0.9487, abs=1e-4)
    assert ls == pytest.approx(np.log(0.1))


def test_metrics_report():
    data, truth = simulate(SimConfig(n=400, seed=5))
    rep = metrics(data, truth, truth, R=2000, seed=1)
    assert isinstance(rep, MetricReport)
    assert rep.rmse == 0.0
    assert 0 <= rep.hit_rate <= 1 and rep.log_score <= 0 and rep.brier_score >= 0
    assert np.isfinite(rep.log_score)
    assert metrics(data, truth, None, R=100).rmse is None
    assert "hit_rate=" in rep.to_text() and "sample_tag=in-sample" in rep.to_text()
    with pytest.raises(ValueError):
        metrics(data, truth, sample_tag="holdout")


def test_split():
    tr, te = split(1000, seed=3)
    assert len(tr) == 800 and len(te) == 200
    assert len(np.intersect1d(tr, te)) == 0
    tr2, _ = split(1000, seed=3)
    np.testing.assert_array_equal(tr, tr2)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        choice_probabilities(ModelParams([0.0, 1.0], [[1.0]]), np.zeros((1, 1)), R=10)


@pytest.fixture(scope="module")
def tiny():
    return simulate(SimConfig(n=200, seed=8))


TINY_CFG = TrainConfig(max_epochs=2, batch_size=100, hidden_width=8, n_samples=3, window=1000)


def test_bootstrap_identical_resamples(tiny):
    data, _ = tiny
    res = bootstrap(data, "combined", TINY_CFG, R=2, seed=1, resample_seeds=[5, 5])
    assert not res.flagged and len(res.replicates) == 2
    np.testing.assert_array_equal(res.std, 0.0)


def test_bootstrap_summary_is_order_free(tiny):
    data, truth = tiny
    res = bootstrap(data, "combined", TINY_CFG, R=3, seed=2)
    rev = BootstrapResult(res.replicates[::-1], res.indices[::-1])
    np.testing.assert_allclose(rev.mean, res.mean, rtol=1e-14)
    np.testing.assert_allclose(rev.std, res.std, rtol=1e-12)
    assert 0.0 <= res.coverage(truth) <= 1.0


def test_bootstrap_parallel_matches_serial(tiny):
    data, _ = tiny
    a = bootstrap(data, "gumbel", TINY_CFG, R=2, seed=3, workers=1)
    b = bootstrap(data, "gumbel", TINY_CFG, R=2, seed=3, workers=2)
    np.testing.assert_array_equal(a.vectors(), b.vectors())


def test_bootstrap_records_failures(tiny):
    data, _ = tiny
    bad = TrainConfig(max_epochs=2, batch_size=100, hidden_width=8, n_samples=3,
                      learning_rate=1e300)
    res = bootstrap(data, "gumbel", bad, R=2, seed=1)
    assert res.flagged and len(res.failures) == 2 and not res.replicates


def test_resample_indices():
    idx = resample_indices(100, 1, 0)
    assert idx.shape == (100,) and idx.min() >= 0 and idx.max() < 100
    np.testing.assert_array_equal(idx, resample_indices(100, 1, 0))
    assert not np.array_equal(idx, resample_indices(100, 1, 1))
    with pytest.raises(ValueError):
        bootstrap(ChoiceDataset(np.zeros((3, 2, 1)), [0, 1, 0]), R=1)
