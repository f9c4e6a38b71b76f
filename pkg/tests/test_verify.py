"""Semigroup Monte Carlo, Harnack-type margin checks, gradient and
exponential-moment checks, and ergodic time averages."""

import numpy as np
import pytest

from scbf.basis import (norm_h_sq, random_unit_field, single_mode_field,
                        zero_field)
from scbf.errors import ConfigError
from scbf.integrator import SimConfig
from scbf.noise import make_additive, uniform_amplitude_for_tr
from scbf.operators import PhysParams, harnack_constants
from scbf.verify import (ObservableF, exp_moment_check, gradient_bound_check,
                         harnack_bound, log_harnack_margin, semigroup_mc,
                         stabilized_exp_mean, time_average)


def _cfg(basis, noise=None, **kw):
    base = dict(params=PhysParams(mu=1.0, beta=1.0, r=5.0, alpha=0.0),
                basis=basis, noise=noise, dt=1e-3, T=0.2, seed=21,
                paths=2, samples=3)
    base.update(kw)
    return SimConfig(**base)


# ---------------------------------------------------------------------------
# observables

def test_observable_closed_forms(basis2, rng):
    a = zero_field(basis2)
    f = ObservableF("exp-lipschitz", a, scale=2.0)
    u = random_unit_field(basis2, rng, norm_h=3.0)
    assert np.isclose(f.log_f(u), 2.0 * np.sqrt(1.0 + 9.0))
    assert f.grad_log_norm == 2.0
    g = ObservableF("bounded-lipschitz", a, scale=1.0, cap=2.0)
    assert np.isclose(g(u), 2.0)              # capped: 1·3 > 2
    assert np.isclose(g(0.5 * u), 1.5)        # linear below the cap
    assert g.grad_norm == 1.0
    with pytest.raises(ConfigError):
        ObservableF("quadratic", a, scale=1.0)
    with pytest.raises(ConfigError):
        ObservableF("exp-lipschitz", a, scale=-1.0)


def test_stabilized_exp_mean_large_exponents():
    mean, se = stabilized_exp_mean(np.array([700.0, 700.0]))
    assert np.isfinite(np.log(mean)) and np.isclose(np.log(mean), 700.0)
    assert se == 0.0
    vals = np.array([0.0, np.log(3.0)])
    mean, _ = stabilized_exp_mean(vals)
    assert np.isclose(mean, 2.0)


def test_semigroup_jensen(basis2, rng):
    """log P_t f >= P_t log f (Jensen), and both are exact at t=0."""
    x = random_unit_field(basis2, rng, norm_h=0.5)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    f = ObservableF("exp-lipschitz", zero_field(basis2), scale=1.0)
    c = _cfg(basis2, noise, paths=100, samples=3)
    est = semigroup_mc(c, x, f)
    assert np.isclose(est.p_log_f[0], float(f.log_f(x)))
    assert np.isclose(np.log(est.p_f[0]), float(f.log_f(x)))
    assert np.all(np.log(est.p_f) >= est.p_log_f - 1e-12)
    with pytest.raises(ConfigError):
        semigroup_mc(_cfg(basis2, noise, paths=1), x, f)


# ---------------------------------------------------------------------------
# Harnack margin

def test_harnack_bound_arithmetic(basis2, rng):
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    x = zero_field(basis2)
    y = single_mode_field(basis2, (1, 0), amplitude=0.2)
    b = harnack_bound(const, x, y)
    assert np.isclose(b.theta_penalty, const.gamma * 0.04)
    assert np.isclose(b.psi(0.0), 0.2)        # no moment factor here
    assert b.psi(1.0) < b.psi(0.5) < b.psi(0.0)
    assert np.isclose(b.psi(2.0), 0.2 * np.exp(-2 * const.theta))


def test_harnack_bound_subcritical_prefactor(basis2):
    p = PhysParams(mu=1.0, beta=1.0, r=2.0)
    # k = mu/(4Tr) must satisfy the moment hypothesis: keep Tr small
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.05))
    const = harnack_constants(p, noise, basis2, "additive-2d-subcritical")
    x = zero_field(basis2)
    y = single_mode_field(basis2, (1, 0), amplitude=0.5)
    moment = np.exp(const.k * 0.25)
    b = harnack_bound(const, x, y)
    assert np.isclose(b.theta_penalty, const.gamma * moment * 0.25)
    assert np.isclose(b.psi(0.0), 2.0 * moment * 0.5)


def test_log_harnack_margin_smoke(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.1)
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    f = ObservableF("exp-lipschitz", zero_field(basis2), scale=1.0)
    c = _cfg(basis2, noise, params=p, T=0.5, paths=150, samples=3)
    rep = log_harnack_margin(c, x, y, f, const)
    assert rep.passed
    assert np.all(rep.margin + 3 * rep.combined_se >= 0)
    g = ObservableF("bounded-lipschitz", zero_field(basis2), scale=1.0)
    with pytest.raises(ConfigError):
        log_harnack_margin(c, x, y, g, const)


# ---------------------------------------------------------------------------
# gradient check

def test_gradient_constant_observable_is_zero(basis2, rng):
    """scale = 0 makes g constant; the FD gradient must vanish exactly."""
    y = random_unit_field(basis2, rng, norm_h=0.3)
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    g = ObservableF("bounded-lipschitz", zero_field(basis2), scale=0.0)
    c = _cfg(basis2, noise, params=p, T=0.05, paths=4, samples=2)
    rep = gradient_bound_check(c, y, g, const, n_directions=2)
    assert np.all(rep.directional == 0.0)
    assert rep.passed
    f = ObservableF("exp-lipschitz", zero_field(basis2), scale=1.0)
    with pytest.raises(ConfigError):
        gradient_bound_check(c, y, f, const)


def test_gradient_bound_check_smoke(basis2, rng):
    y = random_unit_field(basis2, rng, norm_h=0.3)
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    g = ObservableF("bounded-lipschitz", zero_field(basis2), scale=1.0)
    c = _cfg(basis2, noise, params=p, T=0.5, paths=60, samples=2)
    rep = gradient_bound_check(c, y, g, const, n_directions=2)
    assert rep.passed
    # CRN keeps the FD error bars far below a crude two-ensemble variance
    assert np.all(rep.directional_se < 1.0)


# ---------------------------------------------------------------------------
# exponential moment

def test_exp_moment_k_range(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    c = _cfg(basis2, noise, T=0.2, paths=20, samples=5)
    k_max = basis2.lam1 * 1.0 / (4 * noise.tr)
    with pytest.raises(ConfigError):
        exp_moment_check(c, x, 1.01 * k_max)
    with pytest.raises(ConfigError):
        exp_moment_check(c, x, -0.1)
    rep = exp_moment_check(c, x, k_max)
    assert rep.passed
    assert rep.bound == 2.0 * np.exp(k_max * float(norm_h_sq(x)))
    assert rep.sup_values.shape == (20,)
    # S includes the t=0 value ‖x‖² − 0
    assert np.all(rep.sup_values >= float(norm_h_sq(x)) - 1e-12)


# ---------------------------------------------------------------------------
# time averages

def test_time_average_residual(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    noise = make_additive(basis2, uniform_amplitude_for_tr(basis2, 0.1))
    c = _cfg(basis2, noise, T=2.0, paths=30, samples=11)
    avg = time_average(c, x, burn_in=0.5)
    assert avg.burn_in == pytest.approx(0.5, abs=0.21)
    assert abs(avg.residual) < 3 * avg.residual_se + 5e-3
    # dissipation channels are positive and of the right magnitude
    assert 0 < avg.nu_v_sq
    assert 0 <= avg.nu_lrp1
    assert avg.nu_v_sq >= avg.nu_h_sq - 1e-12   # Poincare, lambda_1 = 1
    with pytest.raises(ConfigError):
        time_average(c, x, burn_in=2.0)
    with pytest.raises(ConfigError):
        time_average(c, x, burn_in=-0.1)
