"""Degenerate noise models: additive low-mode forcing and a scalar-gain
multiplicative family, with counter-based Wiener increments.

Degree-of-freedom convention
----------------------------
The forced band is {k : λ_k ≤ λ_{N0}}.  Each conjugate pair ±k carries
(n−1) complex coefficients, i.e. 2(n−1) real degrees of freedom, and
both members of the pair share the amplitude σ_k.  Tr(σσ*) is the sum of
σ_k² over forced *real degrees of freedom*:

    Tr(σσ*) = (n−1) · Σ_{forced modes k, counting ±k} σ_k².

For n = 2 this is simply the sum over forced modes.  All theorem
constants (k, θ, γ, …) are stated in this convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng as rngmod
from .basis import (SpectralBasis, VelocityField, polarization_vectors,
                    norm_h_sq)
from .errors import ConfigError


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal low-mode noise; multiplicative via a scalar gain
    g(u) = q0 + q1·tanh(‖u‖_H) multiplying every amplitude."""

    basis: SpectralBasis
    kind: str                  # "additive" | "multiplicative"
    sigma: np.ndarray          # (nm,) per-mode amplitude, zero off the band
    q0: float = 1.0
    q1: float = 0.0
    # draw plumbing: representative low pairs and their polarization frames
    _rep_idx: np.ndarray = None       # (npairs,) representative mode indices
    _rep_conj: np.ndarray = None      # (npairs,) their -k partners
    _rep_pol: np.ndarray = None       # (npairs, n-1, n) polarization frames

    @property
    def n_pairs(self) -> int:
        return len(self._rep_idx)

    @property
    def draws_per_step(self) -> int:
        return 2 * (self.basis.n - 1) * self.n_pairs

    @property
    def tr(self) -> float:
        """Tr(σσ*) in the real-degree-of-freedom convention."""
        return float((self.basis.n - 1) * np.sum(self.sigma[self.basis.low] ** 2))

    @property
    def sigma_min(self) -> float:
        return float(self.sigma[self.basis.low].min())

    @property
    def c_sigma(self) -> float:
        """Inverse bound on the forced band (additive convention)."""
        return 1.0 / self.sigma_min

    @property
    def lipschitz_sq(self) -> float:
        """Squared Lipschitz constant L of u ↦ σ(u) in Hilbert–Schmidt norm."""
        return self.q1 ** 2 * self.tr if self.kind == "multiplicative" else 0.0

    @property
    def k_tilde(self) -> Optional[float]:
        """Uniform pseudo-inverse bound of the multiplicative model."""
        if self.kind != "multiplicative":
            return None
        return 1.0 / (self.q0 * self.sigma_min)

    def gain(self, u: Optional[VelocityField]) -> np.ndarray:
        if self.kind == "additive":
            return np.array(1.0) if u is None else np.ones(u.batch_shape)
        if u is None:
            raise ConfigError("multiplicative noise needs the current state")
        return self.q0 + self.q1 * np.tanh(np.sqrt(norm_h_sq(u)))


@dataclass
class NoiseIncrement:
    """One Wiener increment on the forced band.

    ``dw`` is the unit-covariance increment (σ ≡ 1 on the band): the
    object paired with the Girsanov shift h in (h, ΔW).  ``scaled`` is
    the forcing actually injected, σ·(gain)·ΔW.
    """

    dt: float
    dw: VelocityField
    scaled: VelocityField


def _make(basis: SpectralBasis, kind: str, amplitude, q0=1.0, q1=0.0):
    low_idx = np.nonzero(basis.low)[0]
    if low_idx.size == 0:
        raise ConfigError("empty forced set: no modes below the eigen cutoff")
    sigma = np.zeros(basis.n_modes)
    amp = np.asarray(amplitude, dtype=float)
    if amp.ndim == 0:
        sigma[low_idx] = float(amp)
    else:
        if amp.shape != (low_idx.size,):
            raise ConfigError(
                f"per-mode amplitude list must have length {low_idx.size} "
                f"(forced modes in basis order), got {amp.shape}")
        sigma[low_idx] = amp
    if np.any(sigma[low_idx] <= 0):
        raise ConfigError("noise amplitudes must be positive on every forced mode")
    # amplitudes must be shared inside each conjugate pair
    if np.any(sigma != sigma[basis.conj_index]):
        raise ConfigError("conjugate modes ±k must share one amplitude")

    rep = np.nonzero(basis.low & basis.pair_rep)[0]
    rep_conj = basis.conj_index[rep]
    rep_pol = np.stack([polarization_vectors(basis.modes[i], basis.n)
                        for i in rep])
    return NoiseModel(basis=basis, kind=kind, sigma=sigma, q0=q0, q1=q1,
                      _rep_idx=rep, _rep_conj=rep_conj, _rep_pol=rep_pol)


def make_additive(basis: SpectralBasis, amplitude) -> NoiseModel:
    """Uniform or per-mode additive amplitudes on the forced band."""
    return _make(basis, "additive", amplitude)


def make_multiplicative(basis: SpectralBasis, amplitude, q0: float,
                        q1: float) -> NoiseModel:
    if q0 <= 0:
        raise ConfigError(f"q0 must be positive (pseudo-inverse bound), got {q0}")
    if q1 < 0:
        raise ConfigError(f"q1 must be nonnegative, got {q1}")
    return _make(basis, "multiplicative", amplitude, q0=q0, q1=q1)


def uniform_amplitude_for_tr(basis: SpectralBasis, tr: float) -> float:
    """Uniform σ_k giving a prescribed Tr(σσ*) on this basis."""
    return float(np.sqrt(tr / ((basis.n - 1) * basis.n_low)))


def unit_increment(model: NoiseModel, dt: float, seed: int, trajectories,
                   step: int) -> VelocityField:
    """Unit-covariance Wiener increment ΔW on the forced band.

    ``trajectories`` is a scalar id or an array of ids (batched field).
    Draw layout per trajectory: pairs in basis order, (n−1) complex
    draws per pair, real parts before imaginary parts per draw.
    """
    b = model.basis
    trajs = np.atleast_1d(np.asarray(trajectories))
    scalar = np.ndim(trajectories) == 0
    npol = b.n - 1
    xi = rngmod.ensemble_normals(seed, trajs, step, model.draws_per_step)
    xi = xi.reshape(len(trajs), model.n_pairs, npol, 2)
    z = (xi[..., 0] + 1j * xi[..., 1]) / np.sqrt(2.0)     # (M, npairs, npol)
    amp = np.einsum("tpq,pqi->tpi", z, model._rep_pol) * np.sqrt(dt)
    coeffs = np.zeros((len(trajs), b.n_modes, b.n), dtype=complex)
    coeffs[:, model._rep_idx, :] = amp
    coeffs[:, model._rep_conj, :] = np.conj(amp)
    if scalar:
        coeffs = coeffs[0]
    return VelocityField(b, coeffs)


def sample_increment(model: NoiseModel, u: Optional[VelocityField], dt: float,
                     seed: int, trajectories, step: int) -> NoiseIncrement:
    """σ(u)ΔW (and the underlying unit ΔW) for one time step."""
    if dt < 0:
        raise ConfigError(f"dt must be nonnegative, got {dt}")
    if model.kind == "multiplicative" and u is None:
        raise ConfigError("multiplicative noise needs the current state")
    dw = unit_increment(model, dt, seed, trajectories, step)
    g = model.gain(u)
    li = model.basis._low_idx
    sc = dw.coeffs.copy()
    sc[..., li, :] *= model.sigma[li][:, None] * np.asarray(g)[..., None, None]
    return NoiseIncrement(dt=dt, dw=dw,
                          scaled=VelocityField(model.basis, sc))


def inverse_on_low(model: NoiseModel, w_low: VelocityField,
                   u: Optional[VelocityField] = None,
                   rtol: float = 1e-10) -> VelocityField:
    """σ(u)^{-1} w for w supported on the forced band."""
    b = model.basis
    high = ~b.low
    hi_sq = np.sum(np.abs(w_low.coeffs[..., high, :]) ** 2, axis=(-2, -1))
    if np.any(hi_sq > rtol ** 2 * (norm_h_sq(w_low) + 1e-300)):
        raise ConfigError("inverse_on_low: field has high-mode content")
    g = model.gain(u) if model.kind == "multiplicative" else 1.0
    inv = np.where(b.low, 1.0 / np.where(b.low, model.sigma, 1.0), 0.0)
    coeffs = w_low.coeffs * inv[:, None] / np.asarray(g)[..., None, None]
    return VelocityField(b, coeffs)


def weighted_low_sq(model: NoiseModel, u: VelocityField) -> np.ndarray:
    """Σ over forced real dof of σ_k²·⟨u, e_dof⟩² = Σ_low σ_k²|a(k)|²."""
    li = model.basis._low_idx
    c = u.coeffs[..., li, :]
    w = (model.sigma[li] ** 2)[:, None]
    return np.sum((c.real ** 2 + c.imag ** 2) * w, axis=(-2, -1))


def inner_low(model: NoiseModel, w: VelocityField, u: VelocityField) -> np.ndarray:
    """⟨w, u⟩_H for w supported on the forced band (sums that band only)."""
    li = model.basis._low_idx
    cw = w.coeffs[..., li, :]
    cu = u.coeffs[..., li, :]
    return np.sum(cw.real * cu.real + cw.imag * cu.imag, axis=(-2, -1))
