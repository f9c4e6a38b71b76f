"""Strict experiment configuration: a YAML/JSON document with a fixed
key schema, validated into an ExperimentSpec before any computation.

Schema (all keys shown; unknown keys are rejected)::

    command: simulate | couple | ergodic | harnack | gradcheck | proptest
    regime:  additive-2d-subcritical | additive-supercritical |
             critical | multiplicative        # optional for simulate/ergodic
    mu: 1.0          beta: 1.0      r: 5.0    alpha: 0.0
    n: 2             N: 32          eigen_cut: 4.0
    dt: 1.0e-3       T: 1.0         seed: 0   paths: 100   samples: 11
    noise:
      kind: additive | multiplicative | none
      amplitude: 0.05        # scalar, per-mode list, or {tr: 0.01}
      q0: 1.0                # multiplicative gain offset
      q1: 0.0                # multiplicative gain slope
    gap: 0.1                 # ‖x−y‖ for two-point experiments
    out: results             # output directory
    format: [csv, json]

Flags override document keys; a regime tag inconsistent with
(n, r, βμ, noise kind) is a hard error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import yaml

from .basis import build_basis
from .errors import ConfigError
from .integrator import SimConfig
from .noise import (make_additive, make_multiplicative,
                    uniform_amplitude_for_tr)
from .operators import REGIMES, PhysParams, harnack_constants

COMMANDS = ("simulate", "couple", "ergodic", "harnack", "gradcheck",
            "proptest")
FORMATS = ("csv", "json")

_TOP_KEYS = {"command", "regime", "mu", "beta", "r", "alpha", "n", "N",
             "eigen_cut", "dt", "T", "seed", "paths", "samples", "noise",
             "gap", "out", "format"}
_NOISE_KEYS = {"kind", "amplitude", "q0", "q1"}

_DEFAULTS = {"alpha": 0.0, "regime": None, "paths": 1, "samples": 11,
             "gap": 0.1, "out": "results", "format": ["csv", "json"],
             "noise": {"kind": "none"}}

_REGIME_COMMANDS = ("couple", "harnack", "gradcheck")


@dataclass(frozen=True)
class ExperimentSpec:
    """A fully validated experiment: what to run and where to put it."""

    command: str
    regime: Optional[str]
    sim: SimConfig
    gap: float
    out_dir: str
    formats: Tuple[str, ...]
    raw: dict = field(compare=False, repr=False, default=None)

    @property
    def constants(self):
        """Regime constants, validated lazily (None when no regime set)."""
        if self.regime is None:
            return None
        return harnack_constants(self.sim.params, self.sim.noise,
                                 self.sim.basis, self.regime)


def _require(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(f"missing required config key {key!r}")
    return doc[key]


def _reject_unknown(doc: dict, allowed, path=""):
    extra = set(doc) - set(allowed)
    if extra:
        name = sorted(extra)[0]
        raise ConfigError(f"unknown config key {path}{name!r}")


def parse_config(text: str, overrides: Optional[dict] = None
                 ) -> ExperimentSpec:
    """Parse and validate a configuration document (strict schema).

    ``overrides`` maps top-level keys (from CLI flags) over document
    values before validation.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config document: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _reject_unknown(doc, _TOP_KEYS)
    merged = dict(_DEFAULTS)
    merged.update(doc)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    command = _require(merged, "command")
    if command not in COMMANDS:
        raise ConfigError(
            f"unknown command {command!r}; expected one of {COMMANDS}")

    p = PhysParams(mu=float(_require(merged, "mu")),
                   beta=float(_require(merged, "beta")),
                   r=float(_require(merged, "r")),
                   alpha=float(merged["alpha"]))
    basis = build_basis(int(_require(merged, "n")),
                        int(_require(merged, "N")),
                        float(_require(merged, "eigen_cut")))

    ndoc = merged["noise"]
    if not isinstance(ndoc, dict):
        raise ConfigError("config key 'noise' must be a mapping")
    _reject_unknown(ndoc, _NOISE_KEYS, path="noise.")
    kind = ndoc.get("kind", "none")
    if kind == "none":
        noise = None
    elif kind in ("additive", "multiplicative"):
        amp = ndoc.get("amplitude")
        if amp is None:
            raise ConfigError("missing required config key 'noise.amplitude'")
        if isinstance(amp, dict):
            _reject_unknown(amp, {"tr"}, path="noise.amplitude.")
            amp = uniform_amplitude_for_tr(basis, float(amp["tr"]))
        if kind == "additive":
            noise = make_additive(basis, amp)
        else:
            noise = make_multiplicative(basis, amp,
                                        q0=float(ndoc.get("q0", 1.0)),
                                        q1=float(ndoc.get("q1", 0.0)))
    else:
        raise ConfigError(f"unknown noise kind {kind!r}")

    sim = SimConfig(params=p, basis=basis, noise=noise,
                    dt=float(_require(merged, "dt")),
                    T=float(_require(merged, "T")),
                    seed=int(_require(merged, "seed")),
                    paths=int(merged["paths"]),
                    samples=int(merged["samples"]))

    if basis.n == 3 and p.r == 3 and 2 * p.beta * p.mu < 1:
        raise ConfigError(
            f"n=r=3 well-posedness requires 2βμ ≥ 1, got 2βμ = "
            f"{2 * p.beta * p.mu}")

    regime = merged["regime"]
    if regime is None and command in _REGIME_COMMANDS:
        raise ConfigError(f"command {command!r} requires a regime tag")
    if regime is not None:
        if regime not in REGIMES:
            raise ConfigError(
                f"unknown regime {regime!r}; expected one of {REGIMES}")
        if noise is None:
            raise ConfigError(f"regime {regime!r} requires a noise model")
        # hard gate before any computation: hypotheses must hold
        harnack_constants(p, noise, basis, regime)

    formats = merged["format"]
    if isinstance(formats, str):
        formats = [s for s in formats.split(",") if s]
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"unknown output format {f!r}")

    gap = float(merged["gap"])
    if gap < 0:
        raise ConfigError(f"gap must be nonnegative, got {gap}")

    return ExperimentSpec(command=command, regime=regime, sim=sim, gap=gap,
                          out_dir=str(merged["out"]),
                          formats=tuple(formats), raw=merged)


def canonical_config(spec: ExperimentSpec) -> str:
    """Serialize a spec back to a document that parses to an equal spec."""
    sim = spec.sim
    noise = sim.noise
    if noise is None:
        ndoc = {"kind": "none"}
    else:
        amp = noise.sigma[noise.basis.low]
        uniform = bool((amp == amp[0]).all())
        ndoc = {"kind": noise.kind,
                "amplitude": float(amp[0]) if uniform
                else [float(a) for a in amp]}
        if noise.kind == "multiplicative":
            ndoc["q0"] = noise.q0
            ndoc["q1"] = noise.q1
    doc = {"command": spec.command, "regime": spec.regime,
           "mu": sim.params.mu, "beta": sim.params.beta, "r": sim.params.r,
           "alpha": sim.params.alpha, "n": sim.basis.n, "N": sim.basis.N,
           "eigen_cut": sim.basis.eigen_cut, "dt": sim.dt, "T": sim.T,
           "seed": sim.seed, "paths": sim.paths, "samples": sim.samples,
           "noise": ndoc, "gap": spec.gap, "out": spec.out_dir,
           "format": list(spec.formats)}
    return yaml.safe_dump(doc, sort_keys=True)
