"""Result emission and state persistence.

Metric files are byte-deterministic for a fixed (spec, seed): wall-clock
metadata is reported on stderr only, never written into output files.
CSV rows carry (series, t, value, stderr); JSON carries the full record
with every number rendered at 17 significant digits.

Checkpoints are self-describing JSON with an explicit version integer:
coefficients as [re, im] pairs in lexicographic mode order, the basis
spec, the RNG cursor (seed, trajectory ids, step), and — for coupling
states — the accumulated logΦ and ∫‖h‖².
"""

from __future__ import annotations

import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .basis import SpectralBasis, VelocityField, build_basis
from .coupling import CouplingState
from .errors import BasisMismatchError, ConfigError

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# metrics records

@dataclass
class MetricsRecord:
    """One experiment's named series, constants, and verdicts.

    ``series`` maps name → list of (t, value, stderr) triples;
    ``constants`` holds named scalars (θ, γ, k, η̂, L, K̃, Tr, λ_{N0}, …);
    ``verdicts`` maps name → (passed, margin).  ``wall_clock`` is
    excluded from every emitted file to keep outputs deterministic.
    """

    experiment_id: str
    series: Dict[str, List[Tuple[float, float, float]]] = field(
        default_factory=dict)
    constants: Dict[str, float] = field(default_factory=dict)
    verdicts: Dict[str, Tuple[bool, float]] = field(default_factory=dict)
    wall_clock: float = field(default=0.0, compare=False)

    def add_series(self, name: str, times, values, stderrs=None):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if stderrs is None:
            stderrs = np.zeros_like(values)
        stderrs = np.atleast_1d(np.asarray(stderrs, dtype=float))
        self.series[name] = [(float(t), float(v), float(s))
                             for t, v, s in zip(times, values, stderrs)]

    def all_passed(self) -> bool:
        return all(ok for ok, _ in self.verdicts.values())


def _g17(x) -> str:
    return format(float(x), ".17g")


def _to_json(obj, indent=0) -> str:
    """Deterministic JSON with floats at 17 significant digits."""
    pad = "  " * indent
    pad_in = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad_in}{json.dumps(str(k))}: {_to_json(v, indent + 1)}'
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad_in}{_to_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _g17(obj)
    return json.dumps(obj)


def record_to_dict(rec: MetricsRecord) -> dict:
    return {"experiment_id": rec.experiment_id,
            "series": {k: [[t, v, s] for t, v, s in rows]
                       for k, rows in rec.series.items()},
            "constants": dict(rec.constants),
            "verdicts": {k: {"passed": bool(ok), "margin": m}
                         for k, (ok, m) in rec.verdicts.items()}}


def record_from_dict(d: dict) -> MetricsRecord:
    rec = MetricsRecord(experiment_id=d["experiment_id"])
    rec.series = {k: [(float(t), float(v), float(s)) for t, v, s in rows]
                  for k, rows in d["series"].items()}
    rec.constants = {k: float(v) for k, v in d["constants"].items()}
    rec.verdicts = {k: (bool(v["passed"]), float(v["margin"]))
                    for k, v in d["verdicts"].items()}
    return rec


def emit_records(records: List[MetricsRecord], out_dir: str,
                 formats=("csv", "json")) -> List[str]:
    """Write CSV (one file per record) and/or JSON (one combined file).

    Returns the written paths.  Wall-clock metadata goes to stderr.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "csv" in formats:
        for rec in records:
            path = os.path.join(out_dir, f"{rec.experiment_id}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["series", "t", "value", "stderr"])
                for name in sorted(rec.series):
                    for t, v, s in rec.series[name]:
                        w.writerow([name, _g17(t), _g17(v), _g17(s)])
            written.append(path)
    if "json" in formats:
        path = os.path.join(out_dir, "records.json")
        payload = [record_to_dict(rec) for rec in records]
        with open(path, "w") as fh:
            fh.write(_to_json(payload) + "\n")
        written.append(path)
    for rec in records:
        print(f"[{rec.experiment_id}] wall-clock {rec.wall_clock:.3f}s",
              file=sys.stderr)
    return written


# ---------------------------------------------------------------------------
# checkpoints

def _coeffs_to_pairs(coeffs: np.ndarray):
    flat = np.asarray(coeffs).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in flat]


def _pairs_to_coeffs(pairs, shape) -> np.ndarray:
    arr = np.array([complex(re, im) for re, im in pairs])
    return arr.reshape(shape)


def _basis_doc(b: SpectralBasis) -> dict:
    return {"n": b.n, "N": b.N, "eigen_cut": b.eigen_cut}


def checkpoint(state, path: str, *, seed: int, trajectory, step: int) -> None:
    """Persist a VelocityField or CouplingState with its RNG cursor."""
    traj = np.atleast_1d(np.asarray(trajectory)).astype(int).tolist()
    if isinstance(state, CouplingState):
        b = state.u.basis
        doc = {"version": CHECKPOINT_VERSION, "kind": "coupling",
               "basis": _basis_doc(b),
               "shape": list(state.u.coeffs.shape),
               "u": _coeffs_to_pairs(state.u.coeffs),
               "v": _coeffs_to_pairs(state.v.coeffs),
               "log_phi": np.atleast_1d(state.log_phi).tolist(),
               "int_h_sq": np.atleast_1d(state.int_h_sq).tolist(),
               "t": state.t}
    elif isinstance(state, VelocityField):
        doc = {"version": CHECKPOINT_VERSION, "kind": "field",
               "basis": _basis_doc(state.basis),
               "shape": list(state.coeffs.shape),
               "coeffs": _coeffs_to_pairs(state.coeffs)}
    else:
        raise ConfigError(f"cannot checkpoint object of type {type(state)!r}")
    doc["rng"] = {"seed": int(seed), "trajectory": traj, "step": int(step)}
    with open(path, "w") as fh:
        fh.write(_to_json(doc) + "\n")


def restore(path: str, basis: Optional[SpectralBasis] = None):
    """Load a checkpoint; returns (state, rng_cursor dict).

    ``basis`` (when given) must match the embedded basis spec; otherwise
    the basis is rebuilt from the file.
    """
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {version!r} not supported "
            f"(expected {CHECKPOINT_VERSION})")
    bd = doc["basis"]
    if basis is not None:
        if (basis.n, basis.N, basis.eigen_cut) != \
                (bd["n"], bd["N"], float(bd["eigen_cut"])):
            raise BasisMismatchError(
                f"checkpoint basis (n={bd['n']}, N={bd['N']}, "
                f"cut={bd['eigen_cut']}) does not match the requested basis")
    else:
        basis = build_basis(bd["n"], bd["N"], float(bd["eigen_cut"]))
    shape = tuple(doc["shape"])
    cursor = doc["rng"]
    if doc["kind"] == "field":
        state = VelocityField(basis, _pairs_to_coeffs(doc["coeffs"], shape))
    elif doc["kind"] == "coupling":
        state = CouplingState(
            VelocityField(basis, _pairs_to_coeffs(doc["u"], shape)),
            VelocityField(basis, _pairs_to_coeffs(doc["v"], shape)),
            np.array(doc["log_phi"]), np.array(doc["int_h_sq"]),
            t=float(doc["t"]), step_idx=int(cursor["step"]))
    else:
        raise ConfigError(f"unknown checkpoint kind {doc['kind']!r}")
    return state, cursor


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False
