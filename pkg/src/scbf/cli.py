"""Command-line orchestration.

Subcommands: simulate, couple, ergodic, harnack, gradcheck, proptest.
Global flags: --config PATH, --seed U64, --out DIR, --paths M,
--format csv,json.  The environment variable SCBF_WORKERS sets the FFT
worker-thread count.

Exit codes: 0 all verdicts pass, 2 a verdict failed, 3 a blow-up guard
tripped, 4 configuration error.

Initial states are derived deterministically from the seed: x is a
random unit field with spectral decay, y = x + gap·(random unit field)
for two-point experiments; every emitted number is a function of the
parsed spec alone.
"""

from __future__ import annotations

import argparse
import sys
from typing import Dict, List

import numpy as np

from .basis import (VelocityField, inner_h, norm_h_sq, norm_v_sq,
                    random_field, random_unit_field, zero_field)
from .config import ExperimentSpec, parse_config
from .coupling import (contraction_rate, entropy_check, girsanov_consistency,
                       run_coupled)
from .errors import BlowUpError, ConfigError
from .integrator import broadcast_state, energy_residual, simulate
from .io import MetricsRecord, Stopwatch, emit_records
from .noise import unit_increment
from .operators import (apply_A, apply_B, c_and_absorption,
                        monotonicity_residual)
from .verify import (ObservableF, gradient_bound_check, log_harnack_margin,
                     time_average)

EXIT_OK = 0
EXIT_VERDICT = 2
EXIT_GUARD = 3
EXIT_CONFIG = 4


def _start_states(spec: ExperimentSpec):
    """Deterministic (x, y) derived from the seed."""
    rng = np.random.default_rng(spec.sim.seed)
    x = random_unit_field(spec.sim.basis, rng, norm_h=1.0)
    d = random_unit_field(spec.sim.basis, rng, norm_h=1.0)
    y = VelocityField(spec.sim.basis, x.coeffs + spec.gap * d.coeffs)
    return x, y


def _mean_se(values: np.ndarray):
    v = np.atleast_1d(values)
    if v.size < 2:
        return float(np.mean(v)), 0.0
    return float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(v.size))


def _constants_block(spec: ExperimentSpec) -> Dict[str, float]:
    out = {"mu": spec.sim.params.mu, "beta": spec.sim.params.beta,
           "r": spec.sim.params.r, "lambda_1": spec.sim.basis.lam1,
           "lambda_N0": spec.sim.basis.lam_cut}
    if spec.sim.noise is not None:
        out["trace"] = spec.sim.noise.tr
    if spec.regime is not None:
        c = spec.constants
        out.update({"k": c.k, "k0": c.k0, "theta": c.theta, "gamma": c.gamma,
                    "ms_rate": c.ms_rate, "L": c.L})
        if c.eta_hat is not None:
            out["eta_hat"] = c.eta_hat
        if c.K_tilde is not None:
            out["K_tilde"] = c.K_tilde
    return out


# ---------------------------------------------------------------------------
# command implementations

def _run_simulate(spec: ExperimentSpec) -> List[MetricsRecord]:
    x, _ = _start_states(spec)
    res = simulate(spec.sim, x, store_states=False)
    rec = MetricsRecord("simulate", constants=_constants_block(spec))
    times = res.times
    h = np.array([_mean_se(led.h_sq) for led in res.ledgers])
    rec.add_series("h_sq", times, h[:, 0], h[:, 1])
    x0_sq = norm_h_sq(broadcast_state(x, spec.sim.paths))
    resid = np.array([_mean_se(energy_residual(led, x0_sq, spec.sim.params))
                      for led in res.ledgers])
    rec.add_series("energy_residual", times, resid[:, 0], resid[:, 1])
    return [rec]


def _run_couple(spec: ExperimentSpec) -> List[MetricsRecord]:
    x, y = _start_states(spec)
    constants = spec.constants
    rec = MetricsRecord("couple", constants=_constants_block(spec))

    report = contraction_rate(spec.sim, x, y, constants, measure="tilted")
    rec.add_series("mean_w_sq", report.times, report.mean_w_sq, report.stderr)
    rec.add_series("w_sq_bound", report.times, report.bound)
    if not report.fit_skipped:
        rec.constants["fitted_rate"] = report.fitted_rate
        rec.constants["fitted_rate_ci"] = report.fitted_ci
    rec.verdicts["contraction"] = (
        report.passed,
        float(np.min(report.bound + 3 * report.stderr - report.mean_w_sq)))

    observables = {"h_sq": norm_h_sq}
    coupled = run_coupled(spec.sim, x, y, measure="base",
                          observables=observables)
    gir = girsanov_consistency(spec.sim, x, y, observables, coupled=coupled)
    rec.add_series("mean_phi", gir.times, gir.mean_phi, gir.se_phi)
    rec.add_series("girsanov_z_h_sq", gir.times, gir.observable_z["h_sq"])
    rec.add_series("ess", gir.times, gir.ess)
    rec.verdicts["girsanov"] = (
        gir.passed, float(3.0 - np.max(np.abs(gir.z_phi))))

    ent = entropy_check(spec.sim, x, y, constants, coupled=coupled)
    rec.constants["entropy_direct"] = ent.est_direct
    rec.constants["entropy_quadratic"] = ent.est_quadratic
    rec.constants["entropy_bound"] = ent.bound
    rec.verdicts["entropy"] = (ent.passed, float(ent.bound - ent.est_direct))
    return [rec]


def _run_ergodic(spec: ExperimentSpec) -> List[MetricsRecord]:
    x, y = _start_states(spec)
    rec = MetricsRecord("ergodic", constants=_constants_block(spec))
    avg = time_average(spec.sim, x)
    rec.constants.update({"nu_v_sq": avg.nu_v_sq, "nu_lrp1": avg.nu_lrp1,
                          "nu_h_sq": avg.nu_h_sq,
                          "terminal_h_sq": avg.terminal_h_sq})
    rec.add_series("ergodic_residual", [avg.horizon], [avg.residual],
                   [avg.residual_se])
    # O(dt) discretization slack on top of the Monte Carlo band
    tol = 3 * avg.residual_se + spec.sim.dt * max(1.0, avg.nu_v_sq)
    rec.verdicts["ergodic_identity"] = (abs(avg.residual) <= tol,
                                        float(tol - abs(avg.residual)))
    return [rec]


def _run_harnack(spec: ExperimentSpec) -> List[MetricsRecord]:
    x, y = _start_states(spec)
    constants = spec.constants
    rec = MetricsRecord("harnack", constants=_constants_block(spec))
    center = zero_field(spec.sim.basis)
    for c in (0.5, 1.0, 2.0):
        f = ObservableF("exp-lipschitz", center, c)
        rep = log_harnack_margin(spec.sim, x, y, f, constants)
        tag = f"c{c:g}"
        rec.add_series(f"margin_{tag}", rep.times, rep.margin,
                       rep.combined_se)
        rec.verdicts[f"log_harnack_{tag}"] = (
            rep.passed, float(np.min(rep.margin + 3 * rep.combined_se)))
    return [rec]


def _run_gradcheck(spec: ExperimentSpec) -> List[MetricsRecord]:
    _, y = _start_states(spec)
    constants = spec.constants
    rec = MetricsRecord("gradcheck", constants=_constants_block(spec))
    center = zero_field(spec.sim.basis)
    for c, cap in ((1.0, 1.0), (0.5, 2.0)):
        f = ObservableF("bounded-lipschitz", center, c, cap=cap)
        rep = gradient_bound_check(spec.sim, y, f, constants)
        tag = f"c{c:g}"
        rec.constants[f"fd_gradient_{tag}"] = rep.max_estimate
        rec.constants[f"gradient_bound_{tag}"] = rep.bound
        rec.verdicts[f"gradient_{tag}"] = (
            rep.passed, float(rep.bound - rep.max_estimate))
    return [rec]


def _run_proptest(spec: ExperimentSpec) -> List[MetricsRecord]:
    """Randomized invariant suites for the operators and the noise."""
    sim = spec.sim
    b = sim.basis
    p = sim.params
    count = max(sim.paths, 16)
    rng = np.random.default_rng(sim.seed)
    rec = MetricsRecord("proptest", constants=_constants_block(spec))

    u = random_field(b, rng, batch_shape=(count,))
    v = random_field(b, rng, batch_shape=(count,))
    w = random_field(b, rng, batch_shape=(count,))
    scale = norm_h_sq(u) * np.sqrt(norm_v_sq(v)) + 1.0

    skew = np.abs(inner_h(apply_B(u, v), v)) / scale
    a_pair = np.abs(inner_h(apply_A(u), u) - norm_v_sq(u))
    poincare = norm_v_sq(u) - b.lam1 * norm_h_sq(u)
    cu, lrp1 = c_and_absorption(u, p.r)
    c_pair = np.abs(inner_h(cu, u) - lrp1) / (lrp1 + 1.0)
    div = np.abs(np.sum(u.coeffs * b.modes, axis=-1)).max()

    checks = {
        "trilinear_skew": float(skew.max()) <= 1e-10,
        "a_pairing": float(a_pair.max()) <= 1e-12 * count,
        "poincare": float(poincare.min()) >= -1e-12,
        "c_pairing": float(c_pair.max()) <= 1e-8,
        "divergence_free": float(div) <= 1e-10,
    }
    if p.r > 3 or (b.n == 2 and p.r <= 3):
        mono = monotonicity_residual(u, v, p)
        floor = -1e-9 * (norm_h_sq(u - v) + 1.0)
        checks["monotonicity"] = bool(np.all(mono >= floor))
    if sim.noise is not None:
        inc1 = unit_increment(sim.noise, sim.dt, sim.seed,
                              np.arange(count), 0)
        inc2 = unit_increment(sim.noise, sim.dt, sim.seed,
                              np.arange(count), 0)
        checks["noise_determinism"] = bool(
            np.array_equal(inc1.coeffs, inc2.coeffs))

    rec.constants["fields_tested"] = float(count)
    for name, ok in checks.items():
        rec.verdicts[name] = (ok, 0.0)
    return [rec]


_RUNNERS = {"simulate": _run_simulate, "couple": _run_couple,
            "ergodic": _run_ergodic, "harnack": _run_harnack,
            "gradcheck": _run_gradcheck, "proptest": _run_proptest}


def run_experiment(spec: ExperimentSpec) -> List[MetricsRecord]:
    with Stopwatch() as sw:
        records = _RUNNERS[spec.command](spec)
    for rec in records:
        rec.wall_clock = sw.elapsed
    return records


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scbf",
        description="Spectral simulator and Monte Carlo verification "
                    "laboratory for damped stochastic Navier-Stokes-type "
                    "dynamics with degenerate noise.")
    sub = parser.add_subparsers(dest="command")
    for name in _RUNNERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--paths", type=int, default=None)
        sp.add_argument("--format", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command is None:
        print("error: a subcommand is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with open(args.config) as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {"command": args.command, "seed": args.seed,
                 "out": args.out, "paths": args.paths, "format": args.format}
    try:
        spec = parse_config(text, overrides)
        records = run_experiment(spec)
        emit_records(records, spec.out_dir, spec.formats)
    except BlowUpError as exc:
        print(f"guard abort: {exc} (trajectory={exc.trajectory}, "
              f"step={exc.step})", file=sys.stderr)
        return EXIT_GUARD
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if all(rec.all_passed() for rec in records):
        return EXIT_OK
    return EXIT_VERDICT


if __name__ == "__main__":
    sys.exit(main())
