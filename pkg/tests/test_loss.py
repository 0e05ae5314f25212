import numpy as np
import pytest

from mnpcvi import autodiff as ad
from mnpcvi import kernels
from mnpcvi.encoder import EncoderConfig, init_params
from mnpcvi.loss import (Batch, ParamLayout, evaluate_loss, l1_term, l2_term, loss_for_batch,
                         objective, observation_noise)
from mnpcvi.model import trace_normalize
from mnpcvi.simulate import SimConfig, simulate

from conftest import random_spd


def mc_kl(rng, m1, S1, m2, S2, draws):
    k = m1.size
    x = rng.multivariate_normal(m1, S1, size=draws)

    def logpdf(x, m, S):
        r = x - m
        return -0.5 * (np.sum(r * np.linalg.solve(S, r.T).T, axis=1)
                       + np.linalg.slogdet(S)[1] + k * np.log(2 * np.pi))

    v = logpdf(x, m1, S1) - logpdf(x, m2, S2)
    return v.mean(), v.std(ddof=1) / np.sqrt(draws)


def test_l2_self_divergence_is_zero(rng):
    S = trace_normalize(random_spd(rng, 3))
    m = rng.standard_normal(3)
    assert abs(l2_term(m, S, m, S)) < 1e-12


def test_l2_hand_value():
    assert l2_term(np.array([0.0]), np.array([[1.0]]), np.array([1.0]), np.array([[1.0]])) \
        == pytest.approx(0.5, abs=1e-15)


def test_l2_matches_monte_carlo(rng):
    for _ in range(20):
        k = int(rng.integers(1, 5))
        m1, m2 = rng.standard_normal(k), rng.standard_normal(k)
        S1, S2 = random_spd(rng, k, 0.5), trace_normalize(random_spd(rng, k, 0.5))
        est, se = mc_kl(rng, m1, S1, m2, S2, 100_000)
        assert abs(l2_term(m1, S1, m2, S2) - est) < 3 * se + 1e-9


def test_l2_non_negative(rng):
    k = 3
    n = 10_000
    G = rng.standard_normal((n, k, k))
    Sq = G @ np.swapaxes(G, 1, 2) + 1e-3 * np.eye(k)
    Sb = trace_normalize(random_spd(rng, k))
    vals = l2_term(rng.standard_normal((n, k)), Sq, rng.standard_normal((n, k)), Sb)
    assert np.all(vals >= -1e-9)


def test_l2_identification_invariance(rng):
    S = random_spd(rng, 4)
    Sq = random_spd(rng, 4)
    m, xa = rng.standard_normal(4), rng.standard_normal(4)
    base = l2_term(m, Sq, xa, trace_normalize(S))
    for c in (1e-3, 0.5, 7.0, 1e4):
        assert l2_term(m, Sq, xa, trace_normalize(c * S)) == pytest.approx(base, rel=1e-12)


def test_l2_rejects_non_pd():
    with pytest.raises(np.linalg.LinAlgError):
        l2_term(np.zeros(2), np.eye(2), np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_l1_uniform_and_perfect():
    mu = np.zeros((1, 3))
    F = np.zeros((1, 3, 3))
    z = np.zeros((1, 5, 3))
    val, _ = l1_term(mu, F, [1], "gumbel", 1.0, z, np.zeros((1, 5, 3)))
    assert val[0] == pytest.approx(np.log(3))
    mu = np.array([[0.0, 50.0, 0.0]])
    for scheme in ("gumbel", "ste", "combined"):
        val, clamped = l1_term(mu, F, [1], scheme, 0.1, z, np.zeros((1, 5, 3)))
        assert val[0] == pytest.approx(0.0, abs=1e-12)
        assert clamped[0] == 0


def test_l1_hard_forward_clamps():
    mu = np.array([[0.0, 5.0, 0.0]])
    val, clamped = l1_term(mu, np.zeros((1, 3, 3)), [0], "combined", 0.1, np.zeros((1, 4, 3)),
                           np.zeros((1, 4, 3)))
    assert val[0] == pytest.approx(-np.log(1e-12))
    assert clamped[0] == 4


def test_l1_agrees_with_long_run(rng):
    mu = np.array([[0.2, -0.1, 0.4]])
    F = np.linalg.cholesky(random_spd(rng, 3))[None]
    z_big = rng.standard_normal((1, 10_000, 3))
    g_big = rng.gumbel(size=(1, 10_000, 3))
    # per-draw values give the Monte-Carlo standard error
    per = [l1_term(mu, F, [2], "gumbel", 0.5, z_big[:, i:i + 1], g_big[:, i:i + 1])[0][0]
           for i in range(0, 10_000, 10)]
    big, _ = l1_term(mu, F, [2], "gumbel", 0.5, z_big, g_big)
    small, _ = l1_term(mu, F, [2], "gumbel", 0.5, z_big[:, :20], g_big[:, :20])
    se = np.std(per, ddof=1) / np.sqrt(20)
    assert abs(small[0] - big[0]) < 3 * se


def _setup(rng, n=60, width=8):
    data, _ = simulate(SimConfig(n=n, seed=int(rng.integers(1 << 30))))
    lay = ParamLayout(EncoderConfig(3, 5, hidden_width=width))
    nu = np.concatenate([init_params(lay.encoder, rng), rng.normal(size=5),
                         rng.normal(size=3) * 0.5])
    return data, lay, nu


def test_batch_scale_and_single_observation(rng):
    data, lay, nu = _setup(rng)
    full = Batch.from_dataset(data)
    z, g = observation_noise(1, 0, np.arange(data.n), 3, 3)
    br = evaluate_loss(nu, lay, full, z, g, 0.3, kernels.GUMBEL, data.n)
    assert br.batch_scale == 1.0
    assert br.total == pytest.approx(br.l1 + br.l2)
    one = Batch.from_dataset(data, [7])
    b1 = evaluate_loss(nu, lay, one, z[[7]], g[[7]], 0.3, kernels.GUMBEL, data.n)
    assert b1.total == pytest.approx(data.n * (b1.l1 + b1.l2))


def test_minibatch_unbiased(rng):
    data, lay, nu = _setup(rng, n=40)
    z, g = observation_noise(2, 0, np.arange(data.n), 3, 3)
    full = evaluate_loss(nu, lay, Batch.from_dataset(data), z, g, 0.3, kernels.GUMBEL, data.n).total
    m = 8
    vals = []
    for r in range(400):
        idx = np.sort(rng.choice(data.n, m, replace=False))
        vals.append(evaluate_loss(nu, lay, Batch.from_dataset(data, idx), z[idx], g[idx], 0.3,
                                  kernels.GUMBEL, data.n).total)
    vals = np.array(vals)
    assert abs(vals.mean() - full) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))


@pytest.mark.parametrize("mode", [kernels.GUMBEL, kernels.SOFTMAX])
def test_total_loss_gradient(rng, mode):
    data, lay, nu = _setup(rng, n=30)
    b = Batch.from_dataset(data, np.arange(10))
    z, g = observation_noise(3, 0, np.arange(10), 4, 3)
    rep = ad.fd_check(lambda v: objective(v, lay, b, z, g, 0.5, mode, 3.0), nu,
                      segments=lay.segments())
    assert rep.passed, rep


def test_l2_gradient_alone(rng):
    data, lay, nu = _setup(rng, n=20)
    b = Batch.from_dataset(data)
    z = np.zeros((20, 1, 3))
    g = np.zeros((20, 1, 3))

    def l2_only(v):
        total, aux = objective(v, lay, b, z, g, 1e6, kernels.SOFTMAX, 1.0)
        return total

    # with an enormous temperature the cross-entropy is the constant log d
    rep = ad.fd_check(l2_only, nu, tol=1e-5)
    assert rep.passed, rep


def test_loss_for_batch_matches_objective(rng):
    data, lay, nu = _setup(rng, n=30)
    b = Batch.from_dataset(data, np.arange(10))
    z, g = observation_noise(3, 0, np.arange(10), 4, 3)
    br, gr = loss_for_batch(nu, lay, b, z, g, 0.5, kernels.COMBINED, 30)
    ev = evaluate_loss(nu, lay, b, z, g, 0.5, kernels.COMBINED, 30)
    assert br == ev
    assert gr.shape == nu.shape and np.all(np.isfinite(gr))


def test_noise_independent_of_batching():
    z1, g1 = observation_noise(5, 2, [3, 9, 4], 6, 3)
    z2, g2 = observation_noise(5, 2, [9], 6, 3)
    np.testing.assert_array_equal(z1[1], z2[0])
    np.testing.assert_array_equal(g1[1], g2[0])
    z3, _ = observation_noise(5, 3, [9], 6, 3)
    assert not np.array_equal(z3[0], z2[0])
