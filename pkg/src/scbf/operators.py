"""Stokes, convection, and absorption operators with their monotonicity
diagnostics and the constants used by the coupling and Harnack checks.

Operator conventions
--------------------
A u        : diagonal, coefficient-wise multiplication by λ_k.
B(u, v)    : P_H((u·∇)v) evaluated pseudo-spectrally in divergence form
             ∂_j(u_j v_i) — valid because inputs are divergence-free —
             so quadratic products are exactly alias-free on the 2N grid.
C(u)       : P_H(|u|^{r−1}u) by pointwise grid evaluation; non-polynomial
             for general r, so quadrature error is controlled only by the
             oversampling and all tolerances carry a small slack.
G(u)       : μAu + B(u,u) + βC(u) + αu.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft as sfft

from . import basis as bas
from .basis import (VelocityField, SpectralBasis, to_physical, leray_project,
                    quadrature_weight, inner_h, norm_h_sq, norm_v_sq, norm_lp,
                    TWO_PI)
from .errors import ConfigError, RegimeError


@dataclass(frozen=True)
class PhysParams:
    """Physical coefficients of the momentum equation."""

    mu: float            # Brinkman (viscosity)
    beta: float          # Forchheimer (absorption strength)
    r: float             # absorption exponent
    alpha: float = 0.0   # Darcy drag, zero throughout the main theory

    def __post_init__(self):
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if self.r < 1:
            raise ConfigError(f"absorption exponent r must be ≥ 1, got {self.r}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be nonnegative, got {self.alpha}")


def apply_A(u: VelocityField) -> VelocityField:
    return VelocityField(u.basis, u.coeffs * u.basis.lam[:, None])


def _gather_products(b: SpectralBasis, grids: np.ndarray) -> np.ndarray:
    """rfft a stack of real grids and gather mode coefficients (a-units)."""
    grid_axes = tuple(range(-b.n, 0))
    spec = sfft.rfftn(grids, axes=grid_axes, workers=bas._FFT_WORKERS)
    return bas.gather_spectrum(b, spec)


def apply_B(u: VelocityField, v: VelocityField = None) -> VelocityField:
    """P_H((u·∇)v); v defaults to u.

    Uses the divergence form ∂_j(u_j v_i), exact for divergence-free u.
    """
    if v is None:
        v = u
    u.basis.require_same(v.basis)
    b = u.basis
    gu = to_physical(u).values
    gv = gu if v is u else to_physical(v).values
    # products u_j v_i stacked on a (j, i) axis pair
    prods = np.expand_dims(gu, -b.n - 1) * np.expand_dims(gv, -b.n - 2)
    shape = prods.shape
    flat = prods.reshape(shape[:-b.n - 2] + (b.n * b.n,) + shape[-b.n:])
    q = _gather_products(b, flat)                    # (..., n*n, nm)
    q = q.reshape(shape[:-b.n - 2] + (b.n, b.n) + (b.n_modes,))
    kvec = b.modes.astype(float)                     # (nm, n)
    conv = 1j * np.einsum("...jim,mj->...mi", q, kvec)
    return leray_project(conv, b)


def _damp_power(mag_sq: np.ndarray, expo: float) -> np.ndarray:
    """mag_sq ** expo with fast paths for small (half-)integer exponents."""
    if expo == int(expo) and 1 <= expo <= 4:
        out = mag_sq.copy()
        for _ in range(int(expo) - 1):
            out *= mag_sq
        return out
    if 2 * expo == int(2 * expo) and 0.5 <= expo <= 4:
        out = np.sqrt(mag_sq)
        for _ in range(int(expo - 0.5)):
            out *= mag_sq
        return out
    return mag_sq ** expo


def apply_C(u: VelocityField, r: float) -> VelocityField:
    return c_and_absorption(u, r)[0]


def c_and_absorption(u: VelocityField, r: float):
    """C(u) together with the quadrature value of ‖u‖^{r+1}_{L^{r+1}}.

    The two share one grid evaluation so the identity ⟨C(u),u⟩ =
    ‖u‖^{r+1}_{L^{r+1}} is a statement about the same quadrature.
    """
    if r < 1:
        raise ConfigError(f"absorption exponent r must be ≥ 1, got {r}")
    b = u.basis
    grid_axes = tuple(range(-b.n, 0))
    gu = to_physical(u).values
    mag_sq = np.sum(gu ** 2, axis=-b.n - 1)
    if r == 1:
        lrp1 = quadrature_weight(b) * np.sum(mag_sq, axis=grid_axes)
        return u.copy(), lrp1
    damp = _damp_power(mag_sq, (r - 1) / 2.0)
    lrp1 = quadrature_weight(b) * np.sum(damp * mag_sq, axis=grid_axes)
    damped = np.expand_dims(damp, -b.n - 1) * gu
    c = _gather_products(b, damped)
    c = np.moveaxis(c, -1, -2)
    return leray_project(np.ascontiguousarray(c), b), lrp1


def apply_G(u: VelocityField, p: PhysParams) -> VelocityField:
    out = p.mu * apply_A(u) + apply_B(u)
    if p.beta != 0:
        out = out + p.beta * apply_C(u, p.r)
    if p.alpha != 0:
        out = out + p.alpha * u
    return out


def drift_terms(u: VelocityField, p: PhysParams, advection: bool = True):
    """Fused explicit drift for the integrator.

    Returns (F, lrp1, max_mag_sq) with F = P_H(B(u,u) + βC(u)) + αu,
    the quadrature value of ‖u‖^{r+1}_{L^{r+1}}, and the grid maximum of
    |u|² for the explicit-term stability guard.  One physical transform
    and one batched forward FFT serve all terms.
    """
    b = u.basis
    grid_axes = tuple(range(-b.n, 0))
    gs = (slice(None),) * b.n          # the grid axes in an index tuple
    gu = to_physical(u).values

    comps = [gu[(Ellipsis, i) + gs] for i in range(b.n)]
    mag_sq = comps[0] * comps[0]
    for gi in comps[1:]:
        mag_sq += gi * gi
    max_mag_sq = np.max(mag_sq, axis=grid_axes)

    use_c = p.beta != 0 and p.r != 1
    if p.r == 1:
        lrp1 = quadrature_weight(b) * np.sum(mag_sq, axis=grid_axes)
        damp = None
    else:
        damp = _damp_power(mag_sq, (p.r - 1) / 2.0)
        lrp1 = quadrature_weight(b) * np.sum(damp * mag_sq, axis=grid_axes)

    triu = [(j, i) for j in range(b.n) for i in range(j, b.n)] if advection \
        else []
    slot = {ji: idx for idx, ji in enumerate(triu)}
    n_work = len(triu) + (b.n if use_c else 0)
    coeffs = np.zeros(u.batch_shape + (b.n_modes, b.n), dtype=complex)
    if n_work:
        work = np.empty(u.batch_shape + (n_work,) + (b.grid_m,) * b.n)
        for (j, i), idx in slot.items():
            np.multiply(comps[j], comps[i], out=work[(Ellipsis, idx) + gs])
        if use_c:
            for i in range(b.n):
                np.multiply(damp, comps[i],
                            out=work[(Ellipsis, len(triu) + i) + gs])
        q = _gather_products(b, work)                 # (..., n_work, nm)
        if advection:
            kvec = b._kvec
            for i in range(b.n):
                acc = q[..., slot[(min(0, i), max(0, i))], :] * kvec[:, 0]
                for j in range(1, b.n):
                    acc += q[..., slot[(min(j, i), max(j, i))], :] * kvec[:, j]
                coeffs[..., i] = 1j * acc
        if use_c:
            for i in range(b.n):
                coeffs[..., i] += p.beta * q[..., len(triu) + i, :]
    if p.beta != 0 and p.r == 1:   # C(u) = u
        coeffs += p.beta * u.coeffs
    out = leray_project(coeffs, b)
    if p.alpha != 0:
        out = out + p.alpha * u
    return out, lrp1, max_mag_sq


def dual_norm_vprime(f: VelocityField) -> np.ndarray:
    """Dual (V′) norm restricted to the resolved band: a lower bound of
    the true dual norm, sufficient for one-sided inequality checks."""
    c = f.coeffs
    return np.sqrt(np.sum((c.real ** 2 + c.imag ** 2)
                          / f.basis.lam[:, None], axis=(-2, -1)))


def trilinear(u: VelocityField, v: VelocityField, w: VelocityField) -> np.ndarray:
    """b(u, v, w) = ⟨B(u,v), w⟩."""
    return inner_h(apply_B(u, v), w)


# ---------------------------------------------------------------------------
# monotonicity diagnostics

def monotonicity_shift(p: PhysParams, n: int,
                       l4_radius: Optional[float] = None) -> float:
    """Shift η making ⟨G(u)−G(v),u−v⟩ + η‖u−v‖² ≥ 0 in the given regime.

    r > 3: closed form in (μ, β, r).  n = r = 3 with 2βμ ≥ 1: zero.
    n = 2, r ∈ [1, 3]: L⁴-ball constant 27 N⁴ / (32 μ³) where N bounds
    both fields' L⁴ norms (pass via ``l4_radius``).
    """
    r, mu, beta = p.r, p.mu, p.beta
    if r > 3:
        return (r - 3) / (2 * mu * (r - 1)) \
            * (2 / (beta * mu * (r - 1))) ** (2 / (r - 3))
    if n == 3 and r == 3:
        if 2 * beta * mu < 1:
            raise RegimeError(
                f"n=r=3 monotonicity requires 2βμ ≥ 1, got 2βμ = {2 * beta * mu}")
        return 0.0
    if n == 2 and 1 <= r <= 3:
        if l4_radius is None:
            raise ConfigError("n=2, r ≤ 3 shift needs the L⁴-ball radius")
        return 27.0 / (32.0 * mu ** 3) * l4_radius ** 4
    raise RegimeError(
        f"no monotonicity statement covers n={n}, r={r}, βμ={beta * mu}")


def monotonicity_residual(u: VelocityField, v: VelocityField,
                          p: PhysParams) -> np.ndarray:
    """⟨G(u)−G(v), u−v⟩ + η‖u−v‖²_H with the regime-appropriate η."""
    u.basis.require_same(v.basis)
    n = u.basis.n
    if p.r > 3 or (n == 3 and p.r == 3):
        eta = monotonicity_shift(p, n)
    else:
        radius = np.maximum(norm_lp(u, 4), norm_lp(v, 4))
        eta = 27.0 / (32.0 * p.mu ** 3) * radius ** 4
        if n != 2:
            raise RegimeError(
                f"no monotonicity statement covers n={n}, r={p.r}")
    w = u - v
    gap = inner_h(apply_G(u, p) - apply_G(v, p), w)
    return gap + eta * norm_h_sq(w)


# ---------------------------------------------------------------------------
# theorem constants

REGIMES = ("additive-2d-subcritical", "additive-supercritical",
           "critical", "multiplicative")


@dataclass(frozen=True)
class HarnackConstants:
    """Constants of the asymptotic log-Harnack inequality for one regime.

    ``theta``/``gamma`` are the remainder rate and entropy coefficient of
    the regime's theorem.  ``ms_rate`` is the mean-square contraction
    exponent from the regime's coupling lemma, which for the r > 3 and
    multiplicative regimes is the un-halved exponent (the theorems state
    the halved rate; both are carried and the report names which one a
    check uses).  ``exp_prefactor`` marks whether bound prefactors carry
    the e^{k‖y‖²} moment factor (only the 2D subcritical additive case).
    """

    regime: str
    tr: float
    c_sigma: float
    lam1: float
    lam_n0: float
    k: float
    k0: float
    eta: Optional[float]
    eta_hat: Optional[float]
    L: float
    K_tilde: Optional[float]
    theta: float
    gamma: float
    ms_rate: float
    exp_prefactor: bool


def eta_hat_shift(p: PhysParams) -> float:
    """Un-halved monotonicity shift entering the coupling rates.

    Zero in the critical case r = 3 (where βμ > 1 is required instead).
    """
    if p.r > 3:
        return (p.r - 3) / (p.mu * (p.r - 1)) \
            * (2 / (p.beta * p.mu * (p.r - 1))) ** (2 / (p.r - 3))
    if p.r == 3:
        return 0.0
    raise RegimeError(f"shift η̂ is defined for r ≥ 3, got r={p.r}")


def harnack_constants(p: PhysParams, noise, basis: SpectralBasis,
                      regime: str) -> HarnackConstants:
    """Validate the regime's hypotheses and assemble its constants.

    ``noise`` is a NoiseModel (additive or multiplicative).
    """
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    lam1 = basis.lam1
    lam_n0 = basis.lam_cut
    tr = noise.tr
    c_sigma = noise.c_sigma
    mu, beta, r = p.mu, p.beta, p.r
    k = lam1 * mu / (4 * tr)
    k0 = lam1 * mu / (2 * tr)
    L = getattr(noise, "lipschitz_sq", 0.0)
    K_tilde = getattr(noise, "k_tilde", None)

    eta = monotonicity_shift(p, basis.n) if (r > 3 or (basis.n == 3 and r == 3
                                                       and 2 * beta * mu >= 1)) else None
    if regime == "additive-2d-subcritical":
        if noise.kind != "additive":
            raise RegimeError("regime additive-2d-subcritical needs additive noise")
        if basis.n != 2 or not (1 <= r < 3):
            raise RegimeError(
                f"regime additive-2d-subcritical needs n=2, 1 ≤ r < 3; "
                f"got n={basis.n}, r={r}")
        if lam1 * mu ** 3 < 8 * tr:
            raise RegimeError(
                f"λ₁μ³ ≥ 8Tr(σσ*) fails: {lam1 * mu ** 3} < {8 * tr}")
        gap = mu * lam_n0 - k * tr
        if gap <= 0:
            raise RegimeError(f"μλ_N0 > kTr(σσ*) fails: {mu * lam_n0} ≤ {k * tr}")
        theta = gap / 2
        gamma = mu ** 2 * c_sigma ** 2 * lam_n0 ** 2 / (4 * gap)
        return HarnackConstants(regime, tr, c_sigma, lam1, lam_n0, k, k0,
                                eta, None, L, K_tilde, theta, gamma,
                                ms_rate=theta, exp_prefactor=True)

    eh = eta_hat_shift(p)
    if regime == "additive-supercritical":
        if noise.kind != "additive":
            raise RegimeError("regime additive-supercritical needs additive noise")
        if r <= 3:
            raise RegimeError(f"regime additive-supercritical needs r > 3, got r={r}")
        gap = mu * lam_n0 - eh
        if gap <= 0:
            raise RegimeError(f"μλ_N0 > η̂ fails: {mu * lam_n0} ≤ {eh}")
        theta = gap / 2
        gamma = c_sigma ** 2 * mu ** 2 * lam_n0 ** 2 / (8 * gap)
        return HarnackConstants(regime, tr, c_sigma, lam1, lam_n0, k, k0,
                                eta, eh, L, K_tilde, theta, gamma,
                                ms_rate=gap, exp_prefactor=False)

    if regime == "critical":
        if noise.kind != "additive":
            raise RegimeError("regime critical needs additive noise")
        if r != 3:
            raise RegimeError(f"regime critical needs r = 3, got r={r}")
        if beta * mu <= 1:
            raise RegimeError(
                f"critical case requires βμ > 1 for coupling, got βμ = {beta * mu}")
        theta = mu * lam_n0 / 2
        gamma = c_sigma ** 2 * mu * lam_n0 / 8
        return HarnackConstants(regime, tr, c_sigma, lam1, lam_n0, k, k0,
                                eta, 0.0, L, K_tilde, theta, gamma,
                                ms_rate=mu * lam_n0, exp_prefactor=False)

    # multiplicative
    if noise.kind != "multiplicative":
        raise RegimeError("regime multiplicative needs multiplicative noise")
    if r < 3:
        raise RegimeError(f"multiplicative regime needs r ≥ 3, got r={r}")
    if r == 3 and beta * mu <= 1:
        raise RegimeError(
            f"critical case requires βμ > 1 for coupling, got βμ = {beta * mu}")
    gap = mu * lam_n0 - (eh + L)
    if gap <= 0:
        raise RegimeError(
            f"λ_N0 > η̂/μ + L/μ fails: {lam_n0} ≤ {(eh + L) / mu}")
    theta = gap / 2
    gamma = K_tilde ** 2 * mu ** 2 * lam_n0 ** 2 / (8 * gap)
    return HarnackConstants(regime, tr, c_sigma, lam1, lam_n0, k, k0,
                            eta, eh, L, K_tilde, theta, gamma,
                            ms_rate=gap, exp_prefactor=False)
