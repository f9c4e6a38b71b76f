"""Coupled pairs, Girsanov weights, and the estimators built on them."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbf.basis import (norm_h_sq, project_low, random_unit_field,
                        single_mode_field, zero_field)
from scbf.coupling import (CouplingState, contraction_rate, control_gain,
                           coupled_step, effective_sample_size, entropy_bound,
                           entropy_check, fit_decay_rate, girsanov_consistency,
                           make_coupling_state, phi_weights, run_coupled,
                           weighted_mean, young_bound)
from scbf.errors import ConfigError
from scbf.integrator import SimConfig
from scbf.noise import make_additive, make_multiplicative
from scbf.operators import PhysParams, harnack_constants


def _cfg(basis, noise, **kw):
    base = dict(params=PhysParams(mu=1.0, beta=1.0, r=5.0, alpha=0.0),
                basis=basis, noise=noise, dt=1e-3, T=0.2, seed=11,
                paths=1, samples=6)
    base.update(kw)
    return SimConfig(**base)


def test_control_gain(basis2):
    p = PhysParams(mu=2.0, beta=1.0, r=5.0)
    assert control_gain(p, basis2) == 0.5 * 2.0 * basis2.lam_cut


def test_identical_starts_trivial_coupling(basis2, rng):
    x = random_unit_field(basis2, rng)
    noise = make_additive(basis2, 0.1)
    c = _cfg(basis2, noise, paths=4, T=0.05)
    for measure in ("base", "tilted"):
        res = run_coupled(c, x, x, measure=measure)
        assert all(np.all(w == 0) for w in res.w_sq)
        assert np.allclose(res.final.log_phi, 0.0)
        assert np.allclose(res.final.int_h_sq, 0.0)
    const = harnack_constants(c.params, noise, basis2,
                              "additive-supercritical")
    rep = contraction_rate(c, x, x, const)
    assert rep.fit_skipped and rep.passed


def test_high_mode_gap_needs_no_control(basis2, rng):
    """A difference outside the forced band costs nothing in logPhi."""
    x = random_unit_field(basis2, rng)
    y = x + single_mode_field(basis2, (3, 2), amplitude=0.1)   # lam 13 > cut
    noise = make_additive(basis2, 0.1)
    state = make_coupling_state(x, y, paths=1)
    nxt = coupled_step(state, _cfg(basis2, noise).params, noise, 1e-3,
                       seed=0, trajectory=0, step_idx=0)
    assert float(nxt.int_h_sq) == 0.0
    assert float(nxt.log_phi) == 0.0


def test_measure_validation(basis2, rng):
    x = random_unit_field(basis2, rng)
    noise = make_additive(basis2, 0.1)
    state = make_coupling_state(x, x)
    with pytest.raises(ConfigError):
        coupled_step(state, _cfg(basis2, noise).params, noise, 1e-3,
                     seed=0, trajectory=0, step_idx=0, measure="weighted")
    c = SimConfig(params=_cfg(basis2, noise).params, basis=basis2,
                  noise=None, dt=1e-3, T=0.01, seed=0)
    with pytest.raises(ConfigError):
        run_coupled(c, x, x)


def test_single_mode_linear_decay_oracle(basis2):
    """Stokes + control, shared noise: ||w||² decays at 2(mu·lam + gain)."""
    gap = single_mode_field(basis2, (1, 0), amplitude=0.1)   # lam = 1, forced
    x = zero_field(basis2)
    y = x + gap
    noise = make_additive(basis2, 0.1)
    p = PhysParams(mu=1.0, beta=0.0, r=1.0)
    dt = 1e-4
    c = _cfg(basis2, noise, params=p, dt=dt, T=0.5, samples=11,
             advection=False)
    res = run_coupled(c, x, y, measure="tilted")
    gain = control_gain(p, basis2)                            # = 2
    rate = 2.0 * (1.0 * 1.0 + gain)                           # = 6
    expect = 0.01 * np.exp(-rate * res.times)
    got = np.array([float(w) for w in res.w_sq])
    assert np.allclose(got, expect, rtol=5e-3)


def test_phi_weight_reductions():
    lp = np.array([700.0, 700.0, 700.0, 690.0])
    w, s = phi_weights(lp)
    assert s == 700.0 and np.isfinite(w).all()
    mean, se = weighted_mean(np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.isclose(mean, 2.5)
    assert np.isclose(se, np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert np.isclose(effective_sample_size(np.zeros(100)), 100.0)
    # one dominant weight collapses the ESS
    assert effective_sample_size(np.array([0.0, -50.0, -50.0])) < 1.01


def test_mean_phi_is_one(basis2, rng):
    """E[Phi(t)] = 1 exactly for the discrete Girsanov density."""
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.05)
    noise = make_additive(basis2, uniform_tr(basis2, 0.1))
    c = _cfg(basis2, noise, T=0.25, paths=400, samples=6)
    res = run_coupled(c, x, y, measure="base")
    mean, se = weighted_mean(res.log_phi[-1], np.ones(c.paths))
    assert abs(mean - 1.0) < 3 * se
    assert se < 0.2


def uniform_tr(basis, tr):
    from scbf.noise import uniform_amplitude_for_tr
    return uniform_amplitude_for_tr(basis, tr)


def test_base_and_tilted_agree(basis2, rng):
    """Weighted base-measure w² matches the tilted ensemble within error."""
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.05)
    noise = make_additive(basis2, uniform_tr(basis2, 0.1))
    c = _cfg(basis2, noise, T=0.25, paths=400, samples=6)
    base = run_coupled(c, x, y, measure="base")
    tilt = run_coupled(c, x, y, measure="tilted", traj_offset=c.paths)
    for i in (-2, -1):
        bm, bse = weighted_mean(base.log_phi[i], base.w_sq[i])
        tm = np.mean(tilt.w_sq[i])
        tse = np.std(tilt.w_sq[i], ddof=1) / np.sqrt(c.paths)
        z = (bm - tm) / np.sqrt(bse ** 2 + tse ** 2)
        assert abs(z) < 3.5


def test_contraction_report_supercritical(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (1, 0), amplitude=0.1)
    noise = make_additive(basis2, uniform_tr(basis2, 0.01))
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    c = _cfg(basis2, noise, params=p, T=1.0, paths=50, samples=11)
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    rep = contraction_rate(c, x, y, const)
    assert np.isclose(rep.theory_rate, 1.0 * 4.0 - 0.25)   # mu·lam_N0 − η̂
    assert rep.passed
    assert rep.fitted_rate + rep.fitted_ci >= 0.9 * rep.theory_rate
    assert np.all(rep.bound_ok)


def test_fit_decay_rate_recovers_synthetic():
    t = np.linspace(0, 2, 21)
    means = 3.0 * np.exp(-2.0 * t)
    ses = 1e-4 * means
    rate, ci = fit_decay_rate(t, means, ses, window_start=0.5)
    assert abs(rate - 2.0) < 1e-6
    with pytest.raises(ConfigError):
        fit_decay_rate(t[:2], means[:2], ses[:2], window_start=0.0)


def test_girsanov_consistency_report(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.02)
    noise = make_additive(basis2, uniform_tr(basis2, 0.1))
    c = _cfg(basis2, noise, T=0.25, paths=300, samples=3)
    obs = {"h_sq": norm_h_sq}
    rep = girsanov_consistency(c, x, y, obs)
    assert rep.passed
    assert np.all(np.abs(rep.z_phi) <= 3.0)
    assert np.all(np.abs(rep.observable_z["h_sq"]) <= 3.0)
    assert rep.ess[-1] > 0.5 * c.paths          # mild tilt: healthy weights


def test_entropy_check_and_bound(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.02)
    noise = make_additive(basis2, uniform_tr(basis2, 0.1))
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    c = _cfg(basis2, noise, params=p, T=0.25, paths=300, samples=3)
    const = harnack_constants(p, noise, basis2, "additive-supercritical")
    rep = entropy_check(c, x, y, const)
    assert abs(rep.agreement_z) <= 3.0
    assert rep.est_direct <= rep.bound + 3 * rep.se_direct
    assert rep.passed and not rep.ess_degenerate
    assert np.isclose(rep.bound, entropy_bound(const, x, y))
    # bound scales with the squared gap
    y2 = x + single_mode_field(basis2, (0, 1), amplitude=0.04)
    assert np.isclose(entropy_bound(const, x, y2), 4 * rep.bound)


def test_multiplicative_coupling_runs(basis2, rng):
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.02)
    noise = make_multiplicative(basis2, uniform_tr(basis2, 0.1),
                                q0=1.0, q1=0.1)
    p = PhysParams(mu=1.0, beta=1.0, r=5.0)
    c = _cfg(basis2, noise, params=p, T=0.2, paths=200, samples=6)
    res = run_coupled(c, x, y, measure="base")
    mean, se = weighted_mean(res.log_phi[-1], np.ones(c.paths))
    assert abs(mean - 1.0) < 3.5 * se
    const = harnack_constants(p, noise, basis2, "multiplicative")
    rep = contraction_rate(c, x, y, const, measure="tilted")
    assert np.all(rep.bound_ok)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_young_inequality_property(seed):
    g = np.random.default_rng(seed)
    f = g.exponential(1.0, size=64)
    h = g.normal(0.0, 2.0, size=64)
    lhs, rhs = young_bound(f, h)
    assert lhs <= rhs + 1e-10


def test_young_edge_cases():
    lhs, rhs = young_bound(np.zeros(8), np.ones(8))
    assert lhs == 0.0 and rhs == 0.0
    with pytest.raises(ConfigError):
        young_bound(np.array([-1.0]), np.array([0.0]))


def test_coupling_state_resume(basis2, rng):
    """run_coupled from a saved mid-state reproduces the full run."""
    x = random_unit_field(basis2, rng, norm_h=0.3)
    y = x + single_mode_field(basis2, (0, 1), amplitude=0.05)
    noise = make_additive(basis2, 0.1)
    c = _cfg(basis2, noise, T=0.1, paths=3, samples=3)
    full = run_coupled(c, x, y, measure="base")
    # replay the first half step-by-step to get a mid-state
    state = make_coupling_state(x, y, c.paths)
    trajs = np.arange(c.paths)
    for m in range(50):
        state = coupled_step(state, c.params, noise, c.dt, c.seed, trajs, m)
    resumed = run_coupled(c, x, y, measure="base", start_state=state)
    assert np.array_equal(resumed.final.u.coeffs, full.final.u.coeffs)
    assert np.array_equal(resumed.final.log_phi, full.final.log_phi)
