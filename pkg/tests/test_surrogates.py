import numpy as np
import pytest

from mnpcvi.numerics import STREAM_NOISE, stream
from mnpcvi.surrogates import SurrogateScheme, decode, gumbel_noise, gumbel_softmax


def test_uniform_at_zero():
    for beta in (0.01, 1.0, 7.0):
        np.testing.assert_allclose(gumbel_softmax(np.zeros(4), np.zeros(4), beta), 0.25)


def test_low_temperature_limit():
    y = gumbel_softmax(np.array([10.0, 0.0, 0.0]), np.zeros(3), 0.01)
    assert y[0] > 1 - 1e-6


def test_hand_value():
    y = gumbel_softmax(np.zeros(2), np.array([1.0, 0.0]), 1.0)
    e = np.e
    np.testing.assert_allclose(y, [e / (e + 1), 1 / (e + 1)], rtol=1e-14)
    assert y[0] == pytest.approx(0.7311, abs=1e-4)


def test_no_overflow():
    y = gumbel_softmax(np.array([1e4, 0.0]), np.zeros(2), 1e-3)
    assert np.all(np.isfinite(y)) and y[0] == 1.0


@pytest.mark.parametrize("d", [2, 5, 10])
def test_gumbel_max_frequency(d):
    rng = stream(12, STREAM_NOISE, d)
    u = rng.standard_normal(d)
    R = 100_000
    g = gumbel_noise(rng, (R, d))
    freq = np.bincount(np.argmax(gumbel_softmax(u, g, 0.5), axis=1), minlength=d) / R
    exact = np.exp(u) / np.exp(u).sum()
    se = np.sqrt(exact * (1 - exact) / R)
    assert np.all(np.abs(freq - exact) <= 3 * se + 1e-12)


def test_simplex_and_shift_invariance(rng):
    for _ in range(200):
        d = rng.integers(2, 12)
        u = rng.standard_normal(d) * 3
        g = rng.gumbel(size=d)
        beta = rng.uniform(0.01, 2.0)
        y = gumbel_softmax(u, g, beta)
        assert np.all(y > 0) or beta < 0.05
        assert np.all(y >= 0)
        assert abs(y.sum() - 1) <= 1e-12
        np.testing.assert_allclose(gumbel_softmax(u + rng.normal() * 10, g, beta), y, atol=1e-12)


def test_monotone_sharpening(rng):
    betas = np.geomspace(2.0, 0.01, 25)
    for _ in range(50):
        u, g = rng.standard_normal(5), rng.gumbel(size=5)
        tops = [gumbel_softmax(u, g, b).max() for b in betas]
        assert np.all(np.diff(tops) >= -1e-15)


def test_jacobian_rows_sum_to_zero(rng):
    for scheme in SurrogateScheme:
        u, g = rng.standard_normal(6), rng.gumbel(size=6)
        _, J = decode(u, scheme, 0.3, g)
        np.testing.assert_allclose(J.sum(axis=0), 0.0, atol=1e-12)


def test_jacobian_matches_finite_differences(rng):
    u, g, beta = rng.standard_normal(4), rng.gumbel(size=4), 0.8
    _, J = decode(u, "gumbel", beta, g)
    h = 1e-6
    num = np.stack([(gumbel_softmax(u + h * e, g, beta) - gumbel_softmax(u - h * e, g, beta)) / (2 * h)
                    for e in np.eye(4)], axis=1)
    np.testing.assert_allclose(J, num, atol=1e-8)


def test_decode_examples(rng):
    u = np.array([0.2, 0.9, 0.1])
    g = rng.gumbel(size=3)
    fwd, J = decode(u, "combined", 0.5, g)
    np.testing.assert_array_equal(fwd, [0, 1, 0])
    fwd_gs, J_gs = decode(u, "gumbel", 0.5, g)
    np.testing.assert_array_equal(J, J_gs)
    np.testing.assert_allclose(fwd_gs, gumbel_softmax(u, g, 0.5))

    fwd, J = decode(np.full(4, 0.3), "ste", 1.0)
    np.testing.assert_array_equal(fwd, [1, 0, 0, 0])
    p = np.full(4, 0.25)
    np.testing.assert_allclose(J, np.diag(p) - np.outer(p, p))


def test_forward_is_on_simplex(rng):
    for scheme in SurrogateScheme:
        fwd, _ = decode(rng.standard_normal((10, 5)), scheme, 0.2, rng.gumbel(size=(10, 5)))
        np.testing.assert_allclose(fwd.sum(axis=-1), 1.0, atol=1e-12)


def test_scheme_parsing():
    assert SurrogateScheme.parse("Combined") is SurrogateScheme.COMBINED
    with pytest.raises(ValueError):
        SurrogateScheme.parse("reinforce")
    with pytest.raises(ValueError):
        decode(np.zeros(3), "gumbel", 1.0)
    with pytest.raises(ValueError):
        gumbel_softmax(np.zeros(3), np.zeros(3), 0.0)
