"""Semi-implicit Euler–Maruyama time stepping with an Itô energy ledger.

Scheme: (I + dt·μA) u_{m+1} = u_m − dt·[B(u_m,u_m) + βC(u_m) + αu_m]
                              + σ(u_m)ΔW_m,
a diagonal solve per mode.  The stiff Stokes part is implicit, so there
is no linear CFL restriction; the explicit absorption term is monitored
by the guard dt·β·max|u|^{r−1} < 1.

Ledger quadrature: trapezoidal for the time integrals of ‖u‖²_V,
‖u‖^{r+1} and ‖u‖²_H; left-point (Itô) for the martingale accumulator
M(t) = 2Σ(σΔW, u) and for the quadratic-variation and trace integrals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .basis import VelocityField, norm_h_sq, norms_h_v_sq
from .errors import BlowUpError, ConfigError
from .noise import NoiseModel, inner_low, sample_increment, weighted_low_sq
from .operators import PhysParams, drift_terms, c_and_absorption

H_NORM_CAP = 1.0e6


@dataclass(frozen=True)
class SimConfig:
    """Everything a trajectory ensemble needs besides its start state."""

    params: PhysParams
    basis: object
    noise: Optional[NoiseModel]
    dt: float
    T: float
    seed: int
    paths: int = 1
    samples: int = 11          # sample times, uniform incl. 0 and T
    advection: bool = True     # test hook: disable B entirely

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.T < 0:
            raise ConfigError(f"horizon T must be nonnegative, got {self.T}")
        if self.T > 0 and self.dt > self.T:
            raise ConfigError(f"dt = {self.dt} exceeds horizon T = {self.T}")
        if self.paths < 1:
            raise ConfigError(f"paths must be ≥ 1, got {self.paths}")
        if self.noise is not None:
            self.basis.require_same(self.noise.basis)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def sample_steps(self) -> np.ndarray:
        n = self.n_steps
        if n == 0:
            return np.array([0])
        count = max(2, min(self.samples, n + 1))
        return np.unique(np.round(np.linspace(0, n, count)).astype(int))


@dataclass
class EnergyLedger:
    """Running terms of the Itô energy identity, one entry per path."""

    t: float
    h_sq: np.ndarray        # ‖u(t)‖²_H
    int_h: np.ndarray       # ∫‖u‖²_H
    int_v: np.ndarray       # ∫‖u‖²_V
    int_lrp1: np.ndarray    # ∫‖u‖^{r+1}_{L^{r+1}}
    int_tr: np.ndarray      # ∫Tr(σ(u)σ(u)*)ds  (= Tr·t when additive)
    mart: np.ndarray        # M(t) = 2Σ(σΔW, u)
    qv: np.ndarray          # ⟨M⟩(t) = 4ΣTr(σσ* u⊗u)Δt

    FIELDS = ("h_sq", "int_h", "int_v", "int_lrp1", "int_tr", "mart", "qv")

    def m_k0(self, k0: float) -> np.ndarray:
        return self.mart - 0.5 * k0 * self.qv

    def copy(self) -> "EnergyLedger":
        return EnergyLedger(self.t, *(np.array(getattr(self, f))
                                      for f in self.FIELDS))


def zero_ledger(batch_shape, h0_sq) -> EnergyLedger:
    z = lambda: np.zeros(batch_shape)
    return EnergyLedger(0.0, np.asarray(h0_sq, dtype=float).copy(),
                        z(), z(), z(), z(), z(), z())


@dataclass
class SimResult:
    times: np.ndarray
    states: List[VelocityField]
    ledgers: List[EnergyLedger]
    observables: Dict[str, np.ndarray]
    final: VelocityField
    final_ledger: EnergyLedger
    final_step: int


def _guard(h_sq: np.ndarray, step_idx: int, traj_offset: int) -> np.ndarray:
    bad = ~np.isfinite(h_sq) | (h_sq > H_NORM_CAP ** 2)
    if np.any(bad):
        tid = int(np.argmax(np.atleast_1d(bad))) + traj_offset
        raise BlowUpError(
            f"state non-finite or ‖u‖_H > {H_NORM_CAP:g} "
            f"(trajectory {tid}, step {step_idx})",
            trajectory=tid, step=step_idx)
    return h_sq


def _check_explicit_guard(p: PhysParams, dt: float, max_mag_sq,
                          step_idx: int) -> None:
    if p.beta == 0 or p.r == 1:
        return
    guard = dt * p.beta * float(np.max(max_mag_sq)) ** ((p.r - 1) / 2.0)
    if guard >= 1.0:
        warnings.warn(
            f"explicit absorption term marginally resolved: "
            f"dt·β·max|u|^(r-1) = {guard:.3g} ≥ 1 at step {step_idx}",
            RuntimeWarning, stacklevel=3)


def step(u: VelocityField, p: PhysParams, noise: Optional[NoiseModel],
         dt: float, seed: int, trajectory, step_idx: int,
         advection: bool = True, extra_drift: Optional[VelocityField] = None,
         increment=None, drift_cache=None, norms=None):
    """One semi-implicit Euler–Maruyama step.

    ``extra_drift`` (a coupling control) is added explicitly;
    ``increment`` overrides noise sampling when the caller shares draws;
    ``drift_cache`` reuses a precomputed ``drift_terms`` triple;
    ``norms`` reuses (‖u‖²_H, ‖u‖²_V).  Returns (u_next, ledger_delta
    dict); the absorption entry is the left-point value, assembled into
    a trapezoid by the caller's loop, and ``next_norms`` hands the new
    state's norms back for reuse.
    """
    b = u.basis
    f, lrp1, max_mag_sq = drift_cache if drift_cache is not None \
        else drift_terms(u, p, advection=advection)
    _check_explicit_guard(p, dt, max_mag_sq, step_idx)
    rhs = u.coeffs - dt * f.coeffs
    if extra_drift is not None:
        rhs = rhs + dt * extra_drift.coeffs
    inc = None
    if noise is not None:
        inc = increment if increment is not None else sample_increment(
            noise, u, dt, seed, trajectory, step_idx)
        rhs = rhs + inc.scaled.coeffs
    solve = 1.0 / (1.0 + dt * p.mu * b.lam)
    u_next = VelocityField(b, rhs * solve[:, None])

    batch = u.batch_shape
    h_sq, v_sq = norms if norms is not None else norms_h_v_sq(u)
    h_next, v_next = norms_h_v_sq(u_next)
    if inc is not None:
        g_sq = np.asarray(noise.gain(
            u if noise.kind == "multiplicative" else None)) ** 2
        d_mart = 2.0 * inner_low(noise, inc.scaled, u)
        d_qv = 4.0 * dt * g_sq * weighted_low_sq(noise, u)
        d_tr = dt * g_sq * np.broadcast_to(noise.tr, batch).copy()
    else:
        d_mart, d_qv, d_tr = (np.zeros(batch),) * 3
    delta = {"lrp1_left": lrp1,
             "d_int_h": 0.5 * dt * (h_sq + h_next),
             "d_int_v": 0.5 * dt * (v_sq + v_next),
             "d_int_tr": d_tr, "d_mart": d_mart, "d_qv": d_qv,
             "next_norms": (h_next, v_next)}
    return u_next, delta


def broadcast_state(x: VelocityField, paths: int) -> VelocityField:
    """Tile a single state across an ensemble (no-op if already batched)."""
    if x.batch_shape == () and paths > 1:
        tiled = np.broadcast_to(x.coeffs, (paths,) + x.coeffs.shape).copy()
        return VelocityField(x.basis, tiled)
    return x.copy()


def simulate(config: SimConfig, x: VelocityField, *,
             traj_offset: int = 0, start_step: int = 0,
             ledger0: Optional[EnergyLedger] = None,
             store_states: bool = True,
             observables: Optional[Dict[str, Callable]] = None
             ) -> SimResult:
    """Run an ensemble to the horizon, sampling states and ledgers.

    Paths carry trajectory ids traj_offset + 0..M−1; draws depend only
    on (seed, id, step), so a restart from ``start_step`` with the
    matching state and ledger reproduces the uninterrupted run bit for
    bit.
    """
    config.basis.require_same(x.basis)
    p = config.params
    u = broadcast_state(x, config.paths)
    trajs = traj_offset + np.arange(config.paths) if u.batch_shape \
        else traj_offset
    n = config.n_steps
    sample_steps = set(int(s) for s in config.sample_steps())
    ledger = ledger0.copy() if ledger0 is not None \
        else zero_ledger(u.batch_shape, norm_h_sq(u))

    times, states, ledgers = [], [], []
    obs_out: Dict[str, list] = {name: [] for name in (observables or {})}
    prev_lrp1 = None
    dt = config.dt
    cur_norms = norms_h_v_sq(u)

    for m in range(start_step, n + 1):
        h_sq = _guard(cur_norms[0], m, traj_offset)
        if m < n:
            cache = drift_terms(u, p, advection=config.advection)
            lrp1_m = cache[1]
        else:
            cache = None
            lrp1_m = c_and_absorption(u, p.r)[1]
        if prev_lrp1 is not None:
            ledger.int_lrp1 = ledger.int_lrp1 + 0.5 * dt * (prev_lrp1 + lrp1_m)
        prev_lrp1 = lrp1_m
        ledger.t = m * dt
        ledger.h_sq = h_sq

        if m in sample_steps:
            times.append(m * dt)
            if store_states:
                states.append(u.copy())
            ledgers.append(ledger.copy())
            for name, fn in (observables or {}).items():
                obs_out[name].append(np.asarray(fn(u)))
        if m == n:
            break

        u, delta = step(u, p, config.noise, dt, config.seed, trajs, m,
                        advection=config.advection, drift_cache=cache,
                        norms=cur_norms)
        cur_norms = delta["next_norms"]
        ledger.int_h = ledger.int_h + delta["d_int_h"]
        ledger.int_v = ledger.int_v + delta["d_int_v"]
        ledger.int_tr = ledger.int_tr + delta["d_int_tr"]
        ledger.mart = ledger.mart + delta["d_mart"]
        ledger.qv = ledger.qv + delta["d_qv"]

    return SimResult(times=np.array(times), states=states, ledgers=ledgers,
                     observables={k: np.array(v) for k, v in obs_out.items()},
                     final=u, final_ledger=ledger, final_step=n)


def energy_residual(ledger: EnergyLedger, x_norm_sq, p: PhysParams):
    """Residual of the Itô energy identity at the ledger's time.

    ‖u(t)‖² + 2μ∫‖u‖²_V + 2α∫‖u‖²_H + 2β∫‖u‖^{r+1} − ‖x‖²
    − ∫Tr(σ(u)σ(u)*) − M(t); zero pathwise for the continuous dynamics,
    O(dt) for the scheme.
    """
    return (ledger.h_sq + 2 * p.mu * ledger.int_v
            + 2 * p.alpha * ledger.int_h
            + 2 * p.beta * ledger.int_lrp1
            - np.asarray(x_norm_sq) - ledger.int_tr - ledger.mart)


def sup_energy_functional(ledgers: List[EnergyLedger], p: PhysParams):
    """sup over sample times of ‖u‖² + μ∫‖u‖²_V + 2β∫‖u‖^{r+1} − ∫Tr ds."""
    vals = [led.h_sq + p.mu * led.int_v + 2 * p.beta * led.int_lrp1
            - led.int_tr for led in ledgers]
    return np.max(np.stack(vals), axis=0)
