import numpy as np
import pytest

from mnpcvi import autodiff as ad
from mnpcvi.encoder import (EncoderConfig, EncoderError, encode, encoder_inputs, forward_heads,
                            init_params, sample_utilities, sample_utilities_graph)


def _data(rng, n, d, p):
    X = rng.random((n, d, p))
    Y = np.eye(d)[rng.integers(0, d, size=n)]
    return Y, X


def test_sizes():
    cfg = EncoderConfig(3, 5)
    assert cfg.input_dim == 3 + 15
    assert cfg.output_dim == 3 + 3 + 3
    assert cfg.size == 18 * 128 + 128 + 128 * 128 + 128 + 128 * 9 + 9


def test_zero_weights():
    cfg = EncoderConfig(4, 2, hidden_width=8)
    out = encode(np.zeros(cfg.size), cfg, np.eye(4)[[1]], np.ones((1, 4, 2)))
    np.testing.assert_allclose(out.mu, 0.0)
    np.testing.assert_allclose(out.D, np.log(2.0))
    np.testing.assert_array_equal(out.L[0], np.eye(4))
    np.testing.assert_allclose(out.sigma[0], np.log(2.0) * np.eye(4))


def test_init_starts_near_identity(rng):
    cfg = EncoderConfig(3, 5)
    xi = init_params(cfg, rng)
    Y, X = _data(rng, 50, 3, 5)
    out = encode(xi, cfg, Y, X)
    assert np.all((out.D > 0.25) & (out.D < 4.0))
    # without the weights only the biases remain: mean 0, D = I, L = I
    head_w = cfg.layout()[-2]
    bare = xi.copy()
    bare[head_w[1]:head_w[1] + head_w[2][0] * head_w[2][1]] = 0.0
    out = encode(bare, cfg, Y, X)
    np.testing.assert_allclose(out.D, 1.0, rtol=1e-12)
    np.testing.assert_allclose(out.mu, 0.0)
    # Glorot bounds
    _, off, shape = cfg.layout()[0]
    W = xi[off:off + shape[0] * shape[1]]
    assert np.max(np.abs(W)) <= np.sqrt(6.0 / sum(shape))


@pytest.mark.parametrize("d", [2, 3, 10])
def test_sigma_pd_for_random_weights(rng, d):
    cfg = EncoderConfig(d, 3, hidden_width=16)
    for _ in range(5):
        xi = rng.standard_normal(cfg.size) * 0.5
        Y, X = _data(rng, 200, d, 3)
        out = encode(xi, cfg, Y, X)
        assert np.all(np.isfinite(out.mu))
        assert np.min(np.linalg.eigvalsh(out.sigma)) > 0
        np.linalg.cholesky(out.sigma)


def test_amortisation_is_per_observation(rng):
    cfg = EncoderConfig(3, 5, hidden_width=16)
    xi = init_params(cfg, rng)
    Y, X = _data(rng, 10, 3, 5)
    a = encode(xi, cfg, Y, X)
    perm = np.array([1, 0] + list(range(2, 10)))
    b = encode(xi, cfg, Y[perm], X[perm])
    np.testing.assert_array_equal(a.mu[5], b.mu[5])
    np.testing.assert_array_equal(a.sigma[5], b.sigma[5])


def test_input_layout_is_row_major():
    X = np.arange(6.0).reshape(1, 2, 3)
    rows = encoder_inputs(np.array([[0.0, 1.0]]), X)
    np.testing.assert_array_equal(rows, [[0, 1, 0, 1, 2, 3, 4, 5]])


def test_sample_utilities(rng):
    cfg = EncoderConfig(3, 2, hidden_width=8)
    out = encode(np.zeros(cfg.size), cfg, np.eye(3)[[0]], np.zeros((1, 3, 2)))
    u = sample_utilities(out, np.zeros((1, 4, 3)))
    np.testing.assert_allclose(u, 0.0)
    from mnpcvi.encoder import EncoderOutput
    ident = EncoderOutput(np.zeros((1, 3)), np.ones((1, 3)), np.eye(3)[None])
    u = sample_utilities(ident, rng.standard_normal((1, 100_000, 3)))
    assert np.max(np.abs(np.cov(u[0].T) - np.eye(3))) < 0.02
    with pytest.raises(ValueError):
        sample_utilities(ident, np.zeros((1, 0, 3)))


def test_reparameterisation_gradient(rng):
    d = 3
    z = rng.standard_normal((1, 2, d))
    strict = np.array([[0.3, -0.2, 0.5]])
    dvec = np.array([[0.7, 1.2, 0.4]])

    def f(x):
        u = sample_utilities_graph(ad.reshape(x, (1, d)), dvec, strict, z, d)
        return ad.sum(u * np.arange(6.0).reshape(1, 2, 3))

    _, g = ad.grad(f, np.zeros(d))
    # du/dmu is the identity, so the gradient is the summed weights
    np.testing.assert_allclose(g, np.arange(6.0).reshape(2, 3).sum(axis=0))
    assert ad.fd_check(f, rng.standard_normal(d)).passed


def test_non_finite_names_layer(rng):
    cfg = EncoderConfig(3, 2, hidden_width=4)
    xi = np.full(cfg.size, 1e308)
    with pytest.raises(EncoderError) as info:
        forward_heads(xi, cfg, np.ones((1, cfg.input_dim)))
    assert info.value.layer == 0
