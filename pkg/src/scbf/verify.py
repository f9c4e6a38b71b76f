"""Semigroup estimators: Monte Carlo evaluation of P_t f, log-Harnack
margin checks, gradient-estimate checks, exponential moments, and
Krylov–Bogoliubov time averages.

All test observables are fixed closed forms with exact Lipschitz data:

    exp-lipschitz      log f(u) = c·√(1 + ‖u − a‖²_H),   ‖∇log f‖_∞ = c
    bounded-lipschitz  g(u) = min(c·‖u − a‖_H, cap),     ‖∇g‖_∞ = c

f > 0 everywhere and is evaluated in log space throughout; P_t f means
are assembled with max-shift stabilization so large c cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .basis import VelocityField, norm_h_sq, random_unit_field
from .errors import ConfigError
from .integrator import SimConfig, simulate
from .operators import HarnackConstants


# ---------------------------------------------------------------------------
# observables

@dataclass(frozen=True)
class ObservableF:
    """A positive test observable with exact gradient constants."""

    kind: str                  # "exp-lipschitz" | "bounded-lipschitz"
    center: VelocityField
    scale: float               # c > 0 (c = 0 gives the constant f = 1)
    cap: float = 1.0           # bound for the bounded-lipschitz kind

    def __post_init__(self):
        if self.kind not in ("exp-lipschitz", "bounded-lipschitz"):
            raise ConfigError(f"unknown observable kind {self.kind!r}")
        if self.scale < 0:
            raise ConfigError(f"observable scale must be ≥ 0, got {self.scale}")

    @property
    def grad_log_norm(self) -> float:
        """‖∇log f‖_∞ (exp-lipschitz) — exact for the closed form."""
        return self.scale

    @property
    def grad_norm(self) -> float:
        """‖∇g‖_∞ (bounded-lipschitz) — exact for the closed form."""
        return self.scale

    def log_f(self, u: VelocityField) -> np.ndarray:
        d_sq = norm_h_sq(u - self.center)
        return self.scale * np.sqrt(1.0 + d_sq)

    def g(self, u: VelocityField) -> np.ndarray:
        d = np.sqrt(norm_h_sq(u - self.center))
        return np.minimum(self.scale * d, self.cap)

    def __call__(self, u: VelocityField) -> np.ndarray:
        if self.kind == "exp-lipschitz":
            return self.log_f(u)       # evaluated in log space by design
        return self.g(u)


def stabilized_exp_mean(log_values: np.ndarray):
    """(mean of e^x, SE) via max-shift, safe for large exponents."""
    log_values = np.asarray(log_values, dtype=float)
    s = float(np.max(log_values))
    vals = np.exp(log_values - s)
    m = len(vals)
    mean = np.mean(vals)
    se = np.std(vals, ddof=1) / np.sqrt(m) if m > 1 else 0.0
    return np.exp(s) * mean, np.exp(s) * se


# ---------------------------------------------------------------------------
# semigroup Monte Carlo

@dataclass
class SemigroupEstimate:
    times: np.ndarray
    p_f: np.ndarray            # estimate of P_t f(x)
    p_f_se: np.ndarray
    p_log_f: np.ndarray        # estimate of P_t log f(x)
    p_log_f_se: np.ndarray


def semigroup_mc(config: SimConfig, x: VelocityField, f: ObservableF, *,
                 traj_offset: int = 0, result=None) -> SemigroupEstimate:
    """Plain Monte Carlo P_t f(x) and P_t log f(x) at the sample times.

    ``result`` reuses a stored-state simulation so several observables
    share one ensemble.
    """
    if config.paths < 2:
        raise ConfigError("semigroup estimates need at least 2 paths")
    if result is None:
        result = simulate(config, x, traj_offset=traj_offset,
                          store_states=False,
                          observables={"logf": f.log_f})
        logf = result.observables["logf"]
        times = result.times
    else:
        logf = np.stack([f.log_f(s) for s in result.states])
        times = result.times
    nt = len(times)
    p_f = np.empty(nt)
    p_f_se = np.empty(nt)
    p_lf = np.empty(nt)
    p_lf_se = np.empty(nt)
    m = logf.shape[1]
    for i in range(nt):
        p_f[i], p_f_se[i] = stabilized_exp_mean(logf[i])
        p_lf[i] = np.mean(logf[i])
        p_lf_se[i] = np.std(logf[i], ddof=1) / np.sqrt(m)
    return SemigroupEstimate(np.asarray(times), p_f, p_f_se, p_lf, p_lf_se)


# ---------------------------------------------------------------------------
# log-Harnack margins

@dataclass
class HarnackBound:
    """The additive penalty Θ(x,y) and remainder coefficient Ψ_t(x,y)."""

    theta_penalty: float       # Θ(x,y)
    k: float
    theta_rate: float          # θ in Ψ_t ∝ e^{−θt}
    psi_prefactor: float       # Ψ_t = psi_prefactor · e^{−θt}

    def psi(self, t) -> np.ndarray:
        return self.psi_prefactor * np.exp(-self.theta_rate * np.asarray(t))


def harnack_bound(constants: HarnackConstants, x: VelocityField,
                  y: VelocityField) -> HarnackBound:
    gap = float(np.sqrt(norm_h_sq(x - y)))
    if constants.exp_prefactor:
        moment = float(np.exp(constants.k * norm_h_sq(y)))
        theta_pen = constants.gamma * moment * gap ** 2
        psi_pref = 2.0 * moment * gap
    else:
        theta_pen = constants.gamma * gap ** 2
        psi_pref = gap
    return HarnackBound(theta_pen, constants.k, constants.theta, psi_pref)


@dataclass
class HarnackMarginReport:
    times: np.ndarray
    lhs: np.ndarray            # P_t log f(y)
    rhs: np.ndarray            # log P_t f(x) + Θ + Ψ_t·c
    margin: np.ndarray         # rhs − lhs
    combined_se: np.ndarray
    theta_penalty: float
    psi: np.ndarray
    passed: bool


def log_harnack_margin(config: SimConfig, x: VelocityField, y: VelocityField,
                       f: ObservableF, constants: HarnackConstants, *,
                       est_x: Optional[SemigroupEstimate] = None,
                       est_y: Optional[SemigroupEstimate] = None
                       ) -> HarnackMarginReport:
    """P_t log f(y) ≤ log P_t f(x) + Θ(x,y) + Ψ_t(x,y)·‖∇log f‖_∞.

    ``est_x``/``est_y`` reuse ensembles across observables; the x- and
    y-started ensembles use disjoint trajectory ids.
    """
    if f.kind != "exp-lipschitz":
        raise ConfigError("log-Harnack margin needs an exp-lipschitz observable")
    if est_x is None:
        est_x = semigroup_mc(config, x, f)
    if est_y is None:
        est_y = semigroup_mc(config, y, f, traj_offset=config.paths)
    b = harnack_bound(constants, x, y)
    times = est_x.times
    lhs = est_y.p_log_f
    log_pf = np.log(est_x.p_f)
    se_log_pf = est_x.p_f_se / est_x.p_f       # delta method
    psi = b.psi(times)
    rhs = log_pf + b.theta_penalty + psi * f.grad_log_norm
    combined_se = np.sqrt(est_y.p_log_f_se ** 2 + se_log_pf ** 2)
    margin = rhs - lhs
    passed = bool(np.all(lhs <= rhs + 3 * combined_se))
    return HarnackMarginReport(times, lhs, rhs, margin, combined_se,
                               b.theta_penalty, psi, passed)


# ---------------------------------------------------------------------------
# gradient estimate (asymptotic strong Feller)

@dataclass
class GradientCheckReport:
    t: float
    directional: np.ndarray    # FD estimates per direction
    directional_se: np.ndarray
    max_estimate: float
    bound: float
    passed: bool


def gradient_bound_check(config: SimConfig, y: VelocityField,
                         f: ObservableF, constants: HarnackConstants, *,
                         n_directions: int = 4, displacement: float = None,
                         direction_seed: int = 0) -> GradientCheckReport:
    """FD estimate of ‖∇P_t f(y)‖ against the asymptotic-strong-Feller bound.

    Central differences with common random numbers: the ± ensembles use
    identical (seed, trajectory, step) draws, so the noise cancels in
    the difference.  Bound (regime constants substituted):

        √(2γ·pref)·√(P_t f² − (P_t f)²) + 2e^{−θt}·pref·‖∇f‖_∞,

    with pref = e^{k‖y‖²} in the 2D subcritical additive regime, else 1.
    """
    if f.kind != "bounded-lipschitz":
        raise ConfigError("gradient check needs a bounded-lipschitz observable")
    if displacement is None:
        displacement = max(1e-2 * float(np.sqrt(norm_h_sq(y))), 1e-3)
    h = displacement
    rng = np.random.default_rng(direction_seed)
    dirs = [random_unit_field(y.basis, rng) for _ in range(n_directions)]

    est = np.empty(n_directions)
    se = np.empty(n_directions)
    for j, d in enumerate(dirs):
        obs = {"g": f.g}
        rp = simulate(config, VelocityField(y.basis, y.coeffs + h * d.coeffs),
                      store_states=False, observables=obs)
        rm = simulate(config, VelocityField(y.basis, y.coeffs - h * d.coeffs),
                      store_states=False, observables=obs)
        diff = (rp.observables["g"][-1] - rm.observables["g"][-1]) / (2 * h)
        m = len(diff)
        est[j] = np.mean(diff)
        se[j] = np.std(diff, ddof=1) / np.sqrt(m)

    base = simulate(config, y, store_states=False,
                    observables={"g": f.g, "g2": lambda u: f.g(u) ** 2})
    g1 = np.mean(base.observables["g"][-1])
    g2 = np.mean(base.observables["g2"][-1])
    var = max(g2 - g1 ** 2, 0.0)
    pref = float(np.exp(constants.k * norm_h_sq(y))) \
        if constants.exp_prefactor else 1.0
    bound = np.sqrt(2 * constants.gamma * pref) * np.sqrt(var) \
        + 2 * np.exp(-constants.theta * config.T) * pref * f.grad_norm
    worst = float(np.max(np.abs(est)))
    worst_se = float(se[np.argmax(np.abs(est))])
    passed = bool(worst <= bound + 3 * worst_se)
    return GradientCheckReport(config.T, est, se, worst, bound, passed)


# ---------------------------------------------------------------------------
# exponential moment

@dataclass
class ExpMomentReport:
    k: float
    estimate: float
    stderr: float
    bound: float
    sup_values: np.ndarray
    passed: bool


def exp_moment_check(config: SimConfig, x: VelocityField,
                     k: float) -> ExpMomentReport:
    """E[exp(k·S_T)] ≤ 2e^{k‖x‖²} with
    S_T = sup_{t≤T}[‖u‖² + μ∫V² + 2β∫L^{r+1} − ∫Tr ds] on the sample grid.

    A necessary-condition check only: the sup is over sample times and
    the horizon is finite.
    """
    from .integrator import sup_energy_functional
    noise = config.noise
    if noise is None:
        k_max = np.inf
    else:
        k_max = config.basis.lam1 * config.params.mu / (4 * noise.tr)
    if k < 0 or k > k_max:
        raise ConfigError(
            f"exponent k must lie in [0, λ₁μ/(4Tr)] = [0, {k_max:g}], got {k}")
    res = simulate(config, x, store_states=False)
    s_t = sup_energy_functional(res.ledgers, config.params)
    est, se = stabilized_exp_mean(k * s_t)
    bound = 2.0 * float(np.exp(k * norm_h_sq(x)))
    passed = bool(est <= bound * (1.0 + 3.0 * (se / est if est > 0 else 0.0)))
    return ExpMomentReport(k, est, se, bound, s_t, passed)


# ---------------------------------------------------------------------------
# ergodic time averages

@dataclass
class ErgodicAverage:
    horizon: float
    burn_in: float
    nu_v_sq: float             # time average of ‖u‖²_V
    nu_lrp1: float             # time average of ‖u‖^{r+1}
    nu_h_sq: float             # time average of ‖u‖²_H
    terminal_h_sq: float       # E‖u(n)‖²
    residual: float
    residual_se: float


def time_average(config: SimConfig, x: VelocityField,
                 burn_in: float = 0.0) -> ErgodicAverage:
    """Krylov–Bogoliubov averages over [burn_in, T] and the combined
    Itô-identity residual

        2μ·ν(V²) + 2α·ν(H²) + 2β·ν(L^{r+1}) − Tr
        − (E‖u(burn)‖² − E‖u(T)‖²)/(T−burn),

    which vanishes for the continuous dynamics (O(dt) + MC error here).
    Paths give the SE; a single path reports SE 0.
    """
    if not 0.0 <= burn_in < config.T:
        raise ConfigError(
            f"burn-in must lie in [0, T) = [0, {config.T}), got {burn_in}")
    res = simulate(config, x, store_states=False)
    times = np.asarray(res.times)
    i0 = int(np.argmin(np.abs(times - burn_in)))
    led0, led1 = res.ledgers[i0], res.ledgers[-1]
    span = led1.t - led0.t
    if span <= 0:
        raise ConfigError("averaging window is empty; add sample times")
    nu_v = (led1.int_v - led0.int_v) / span
    nu_l = (led1.int_lrp1 - led0.int_lrp1) / span
    nu_h = (led1.int_h - led0.int_h) / span
    tr_avg = (led1.int_tr - led0.int_tr) / span
    resid = (2 * config.params.mu * nu_v + 2 * config.params.alpha * nu_h
             + 2 * config.params.beta * nu_l
             - tr_avg - (led0.h_sq - led1.h_sq) / span)
    resid = np.atleast_1d(resid)
    m = resid.size
    se = float(np.std(resid, ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    return ErgodicAverage(
        horizon=float(led1.t), burn_in=float(led0.t),
        nu_v_sq=float(np.mean(nu_v)), nu_lrp1=float(np.mean(nu_l)),
        nu_h_sq=float(np.mean(nu_h)),
        terminal_h_sq=float(np.mean(led1.h_sq)),
        residual=float(np.mean(resid)), residual_se=se)
