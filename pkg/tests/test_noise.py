"""Noise models: trace convention, increment statistics, counter-based
reproducibility, the forced-band inverse, and the multiplicative gain."""

import numpy as np
import pytest

from scbf import rng as rngmod
from scbf.basis import (VelocityField, inner_h, norm_h_sq, project_low,
                        random_field, random_unit_field, zero_field)
from scbf.errors import ConfigError
from scbf.noise import (NoiseModel, inner_low, inverse_on_low, make_additive,
                        make_multiplicative, sample_increment,
                        uniform_amplitude_for_tr, unit_increment,
                        weighted_low_sq)


def test_rng_streams_disjoint_and_reproducible():
    a = rngmod.normals(7, 3, 11, 64)
    b = rngmod.normals(7, 3, 11, 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, rngmod.normals(7, 4, 11, 64))
    assert not np.array_equal(a, rngmod.normals(7, 3, 12, 64))
    assert not np.array_equal(a, rngmod.normals(8, 3, 11, 64))
    ens = rngmod.ensemble_normals(7, np.array([2, 3, 5]), 11, 64)
    assert np.array_equal(ens[1], a)


def test_trace_convention(basis2, basis3):
    m2 = make_additive(basis2, 0.1)
    # n=2: Tr = sum over 12 forced modes of sigma^2
    assert np.isclose(m2.tr, 12 * 0.01)
    m3 = make_additive(basis3, 0.1)
    assert np.isclose(m3.tr, (3 - 1) * basis3.n_low * 0.01)
    assert np.isclose(uniform_amplitude_for_tr(basis2, m2.tr), 0.1)
    assert np.isclose(m2.c_sigma, 10.0)


def test_amplitude_validation(basis2):
    with pytest.raises(ConfigError):
        make_additive(basis2, 0.0)
    with pytest.raises(ConfigError):
        make_additive(basis2, [0.1] * 5)   # wrong length
    with pytest.raises(ConfigError):
        make_multiplicative(basis2, 0.1, q0=0.0, q1=0.5)
    with pytest.raises(ConfigError):
        make_multiplicative(basis2, 0.1, q0=1.0, q1=-0.5)
    # per-mode amplitudes sharing values within each pair are accepted
    amps = np.full(basis2.n_low, 0.2)
    m = make_additive(basis2, amps)
    assert np.isclose(m.sigma_min, 0.2)


def test_increment_supported_on_band_real_divfree(basis2, rng):
    m = make_additive(basis2, 0.1)
    inc = sample_increment(m, None, 1e-2, seed=5, trajectories=0, step=3)
    c = inc.scaled.coeffs
    assert np.abs(c[~basis2.low]).max() == 0.0
    # reality and divergence-freeness
    assert np.allclose(c, np.conj(c[basis2.conj_index]), atol=1e-15)
    assert np.abs(np.sum(c * basis2.modes, axis=-1)).max() < 1e-14
    assert np.allclose(inc.scaled.coeffs, 0.1 * inc.dw.coeffs)


def test_increment_covariance(basis2):
    """E||sigma dW||^2 = Tr(sigma sigma*) dt."""
    m = make_additive(basis2, 0.1)
    dt = 0.5
    inc = sample_increment(m, None, dt, seed=0,
                           trajectories=np.arange(4000), step=0)
    h2 = norm_h_sq(inc.scaled)
    est = h2.mean()
    se = h2.std(ddof=1) / np.sqrt(len(h2))
    assert abs(est - m.tr * dt) < 4 * se


def test_increment_bitwise_independent_of_batch(basis2):
    m = make_additive(basis2, 0.1)
    full = unit_increment(m, 1e-3, seed=9, trajectories=np.arange(10), step=4)
    solo = unit_increment(m, 1e-3, seed=9, trajectories=7, step=4)
    assert np.array_equal(full.coeffs[7], solo.coeffs)


def test_multiplicative_gain_and_constants(basis2, rng):
    amp = 0.1
    m = make_multiplicative(basis2, amp, q0=1.0, q1=0.5)
    u = random_unit_field(basis2, rng, norm_h=2.0)
    g = m.gain(u)
    assert np.isclose(g, 1.0 + 0.5 * np.tanh(2.0))
    assert np.isclose(m.lipschitz_sq, 0.25 * m.tr)
    assert np.isclose(m.k_tilde, 1.0 / amp)
    inc = sample_increment(m, u, 1e-2, seed=1, trajectories=0, step=0)
    assert np.allclose(inc.scaled.coeffs, amp * g * inc.dw.coeffs)
    with pytest.raises(ConfigError):
        sample_increment(m, None, 1e-2, seed=1, trajectories=0, step=0)


def test_inverse_on_low_roundtrip(basis2, rng):
    m = make_additive(basis2, 0.25)
    w = project_low(random_field(basis2, rng))
    back = inverse_on_low(m, w)
    assert np.allclose(back.coeffs[basis2.low], w.coeffs[basis2.low] / 0.25)
    # rejects high-mode content
    full = random_field(basis2, rng)
    with pytest.raises(ConfigError):
        inverse_on_low(m, full)


def test_inverse_on_low_multiplicative(basis2, rng):
    m = make_multiplicative(basis2, 0.25, q0=1.0, q1=0.5)
    u = random_unit_field(basis2, rng)
    w = project_low(random_field(basis2, rng))
    back = inverse_on_low(m, w, u)
    g = m.gain(u)
    assert np.allclose(back.coeffs[basis2.low],
                       w.coeffs[basis2.low] / (0.25 * g))


def test_low_band_reductions(basis2, rng):
    m = make_additive(basis2, 0.3)
    u = random_field(basis2, rng, batch_shape=(4,))
    w = project_low(random_field(basis2, rng, batch_shape=(4,)))
    assert np.allclose(inner_low(m, w, u), inner_h(w, u), atol=1e-13)
    c_low = u.coeffs[..., basis2.low, :]
    expect = 0.09 * np.sum(np.abs(c_low) ** 2, axis=(-2, -1))
    assert np.allclose(weighted_low_sq(m, u), expect)


def test_empty_band_rejected():
    from scbf.basis import build_basis
    with pytest.raises(ConfigError):
        # cut below lambda_1 is rejected at basis construction already
        build_basis(2, 8, 0.9)
