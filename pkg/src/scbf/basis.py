"""Divergence-free Fourier eigenbasis of the Stokes operator on the
2π-periodic box, plus transforms and norms.

Conventions
-----------
A velocity field is stored as one complex vector coefficient a(k) ∈ C^n
per retained wavevector k, with

    u(x) = Σ_k a(k) e^{i k·x} / (2π)^{n/2},

so that the plane waves are L²-orthonormal and ‖u‖²_H = Σ_k |a(k)|².
Real fields satisfy a(−k) = conj(a(k)); divergence-free fields satisfy
k·a(k) = 0.  The mean (k = 0) mode is excluded.  Modes are ordered
lexicographically by (λ_k, k) with λ_k = |k|², which also fixes the
checkpoint layout and the noise degree-of-freedom indexing.

The physical-space companion lives on an oversampled uniform grid with
M = 2N points per axis: quadratic products of band-limited fields are
then alias-free after truncation back to the resolved band, and the
power nonlinearity |u|^{r-1}u is evaluated by quadrature whose error is
controlled by the oversampling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.fft as sfft

from .errors import BasisMismatchError, ConfigError

TWO_PI = 2.0 * np.pi

# worker threads for batched FFTs, settable via the environment
_FFT_WORKERS = max(1, int(os.environ.get("SCBF_WORKERS", "1")))


def set_fft_workers(count: int) -> None:
    global _FFT_WORKERS
    if count < 1:
        raise ConfigError(f"worker count must be ≥ 1, got {count}")
    _FFT_WORKERS = int(count)


@dataclass(frozen=True)
class SpectralBasis:
    """Immutable eigenstructure shared by all fields of one resolution."""

    n: int
    N: int
    eigen_cut: float
    modes: np.ndarray          # (nm, n) integer wavevectors
    lam: np.ndarray            # (nm,) eigenvalues |k|²
    conj_index: np.ndarray     # (nm,) index of -k for each mode
    pair_rep: np.ndarray       # (nm,) bool, one representative per ±k pair
    low: np.ndarray            # (nm,) bool, λ_k ≤ λ_{N0}
    lam_cut: float             # λ_{N0}: largest eigenvalue ≤ eigen_cut
    n_low: int                 # number of forced modes (counting ±k)
    grid_m: int                # oversampled grid points per axis (2N)
    # transform plumbing (derived, cached)
    _scatter_sel: np.ndarray = field(repr=False, default=None)
    _scatter_flat: np.ndarray = field(repr=False, default=None)
    _gather_flat: np.ndarray = field(repr=False, default=None)
    _gather_conj: np.ndarray = field(repr=False, default=None)
    _kvec: np.ndarray = field(repr=False, default=None)          # float modes
    _k_over_lam: np.ndarray = field(repr=False, default=None)    # k/|k|²
    _low_idx: np.ndarray = field(repr=False, default=None)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def lam1(self) -> float:
        return float(self.lam[0])

    def same_as(self, other: "SpectralBasis") -> bool:
        return (self.n == other.n and self.N == other.N
                and self.eigen_cut == other.eigen_cut)

    def require_same(self, other: "SpectralBasis") -> None:
        if not self.same_as(other):
            raise BasisMismatchError(
                f"basis mismatch: (n={self.n}, N={self.N}, cut={self.eigen_cut})"
                f" vs (n={other.n}, N={other.N}, cut={other.eigen_cut})")


def build_basis(n: int, N: int, eigen_cut: float) -> SpectralBasis:
    """Enumerate modes {k ∈ Z^n \\ {0}, |k_i| ≤ N/2} and the low/high split.

    ``eigen_cut`` fixes the forced band: modes with λ_k ≤ eigen_cut are
    "low"; λ_{N0} is the largest eigenvalue inside the band.
    """
    if n not in (2, 3):
        raise ConfigError(f"dimension n must be 2 or 3, got {n}")
    if N % 2 != 0 or N < 4:
        raise ConfigError(f"resolution N must be even and ≥ 4, got {N}")
    half = N // 2
    if not (1.0 <= eigen_cut < half * half):
        raise ConfigError(
            f"eigen_cut must satisfy 1 ≤ cut < (N/2)² = {half * half}, "
            f"got {eigen_cut}")

    axes = [np.arange(-half, half + 1)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    modes = np.stack([m.ravel() for m in mesh], axis=1)
    modes = modes[np.any(modes != 0, axis=1)]
    lam = np.sum(modes.astype(np.int64) ** 2, axis=1).astype(float)
    order = np.lexsort(tuple(modes[:, i] for i in reversed(range(n))) + (lam,))
    modes = np.ascontiguousarray(modes[order])
    lam = lam[order]

    index = {tuple(k): i for i, k in enumerate(modes)}
    conj_index = np.array([index[tuple(-k)] for k in modes])
    pair_rep = np.array([tuple(k) > tuple(-k) for k in modes])

    low = lam <= eigen_cut
    lam_cut = float(lam[low].max())
    n_low = int(low.sum())

    grid_m = 2 * N
    half_last = grid_m // 2 + 1
    last = modes[:, -1]
    keep = last >= 0
    sel = np.nonzero(keep)[0]

    def flatten(mm):
        """Row-major flat index into the (M, ..., M, M//2+1) half-spectrum."""
        idx = mm[:, 0] % grid_m if n > 1 else np.zeros(len(mm), dtype=int)
        for i in range(1, n - 1):
            idx = idx * grid_m + mm[:, i] % grid_m
        return idx * half_last + mm[:, -1]

    scatter_flat = flatten(modes[sel])
    gmodes = np.where(keep[:, None], modes, -modes)
    gather_flat = flatten(gmodes)
    gather_conj = np.nonzero(~keep)[0]

    kvec = modes.astype(float)
    k_over_lam = kvec / lam[:, None]

    return SpectralBasis(
        n=n, N=N, eigen_cut=float(eigen_cut), modes=modes, lam=lam,
        conj_index=conj_index, pair_rep=pair_rep, low=low,
        lam_cut=lam_cut, n_low=n_low, grid_m=grid_m,
        _scatter_sel=sel, _scatter_flat=scatter_flat,
        _gather_flat=gather_flat, _gather_conj=gather_conj,
        _kvec=kvec, _k_over_lam=k_over_lam,
        _low_idx=np.nonzero(low)[0])


@dataclass
class VelocityField:
    """Divergence-free velocity state in coefficient space.

    ``coeffs`` has shape (..., n_modes, n); leading axes are ensemble
    batch dimensions and broadcast through every operation.
    """

    basis: SpectralBasis
    coeffs: np.ndarray

    @property
    def batch_shape(self):
        return self.coeffs.shape[:-2]

    def copy(self) -> "VelocityField":
        return VelocityField(self.basis, self.coeffs.copy())

    def __add__(self, other):
        self.basis.require_same(other.basis)
        return VelocityField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self.basis.require_same(other.basis)
        return VelocityField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return VelocityField(self.basis, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return VelocityField(self.basis, -self.coeffs)


@dataclass
class PhysicalField:
    """Real velocity samples on the oversampled grid.

    ``values`` has shape (..., n, M, ..., M): component axis first, then
    the n grid axes, so batched FFTs run over the trailing axes.
    """

    basis: SpectralBasis
    values: np.ndarray


def zero_field(basis: SpectralBasis, batch_shape=()) -> VelocityField:
    shape = tuple(batch_shape) + (basis.n_modes, basis.n)
    return VelocityField(basis, np.zeros(shape, dtype=complex))


def single_mode_field(basis: SpectralBasis, k, amplitude: float,
                      phase: float = 0.0) -> VelocityField:
    """Real field supported on one conjugate pair ±k with ‖u‖_H = amplitude.

    For n = 2 the polarization is k⊥/|k|; for n = 3 the first vector of
    the deterministic orthonormal frame normal to k is used.
    """
    k = np.asarray(k, dtype=int)
    idx = _mode_index(basis, k)
    pol = polarization_vectors(k, basis.n)[0]
    u = zero_field(basis)
    a = amplitude / np.sqrt(2.0) * np.exp(1j * phase)
    u.coeffs[idx] = a * pol
    u.coeffs[basis.conj_index[idx]] = np.conj(a * pol)
    return u


def _mode_index(basis: SpectralBasis, k) -> int:
    hit = np.nonzero(np.all(basis.modes == np.asarray(k), axis=1))[0]
    if hit.size != 1:
        raise ConfigError(f"wavevector {tuple(k)} not in basis")
    return int(hit[0])


def polarization_vectors(k, n: int) -> np.ndarray:
    """Orthonormal divergence-free frame normal to k, shape (n-1, n)."""
    k = np.asarray(k, dtype=float)
    norm = np.linalg.norm(k)
    if n == 2:
        return np.array([[-k[1], k[0]]]) / norm
    # n == 3: Gram-Schmidt against a fixed helper axis
    helper = np.array([1.0, 0.0, 0.0])
    if abs(k[0]) * 3 > 2 * norm:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(k, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(k, e1) / norm
    return np.stack([e1, e2])


def leray_project(raw, basis: SpectralBasis = None) -> VelocityField:
    """Apply P_H: û(k) ← (I − kkᵀ/|k|²) û(k), mode by mode."""
    if isinstance(raw, VelocityField):
        basis = raw.basis
        arr = raw.coeffs
    else:
        arr = raw
    kvec, kol = basis._kvec, basis._k_over_lam
    kdot = arr[..., 0] * kvec[:, 0]
    for i in range(1, basis.n):
        kdot += arr[..., i] * kvec[:, i]
    proj = arr - kdot[..., None] * kol
    return VelocityField(basis, proj)


def symmetrize_reality(u: VelocityField) -> VelocityField:
    """Enforce a(−k) = conj(a(k)) by averaging a field with its reflection."""
    c = u.coeffs
    sym = 0.5 * (c + np.conj(c[..., u.basis.conj_index, :]))
    return VelocityField(u.basis, sym)


def split_low_high(u: VelocityField):
    """Orthogonal decomposition at the forced-band cutoff λ_{N0}."""
    low = u.basis.low
    ul = VelocityField(u.basis, np.where(low[:, None], u.coeffs, 0.0))
    uh = VelocityField(u.basis, np.where(low[:, None], 0.0, u.coeffs))
    return ul, uh


def project_low(u: VelocityField) -> VelocityField:
    return VelocityField(u.basis, np.where(u.basis.low[:, None], u.coeffs, 0.0))


# ---------------------------------------------------------------------------
# transforms

def to_physical(u: VelocityField) -> PhysicalField:
    b = u.basis
    m = b.grid_m
    half_shape = (m,) * (b.n - 1) + (m // 2 + 1,)
    flat_len = int(np.prod(half_shape))
    spec = np.zeros(u.batch_shape + (b.n, flat_len), dtype=complex)
    scale = m ** b.n / TWO_PI ** (b.n / 2.0)
    spec[..., b._scatter_flat] = \
        np.moveaxis(u.coeffs[..., b._scatter_sel, :], -1, -2) * scale
    spec = spec.reshape(u.batch_shape + (b.n,) + half_shape)
    grid_axes = tuple(range(-b.n, 0))
    grid = sfft.irfftn(spec, s=(m,) * b.n, axes=grid_axes,
                       workers=_FFT_WORKERS)
    return PhysicalField(b, grid)


def gather_spectrum(b: SpectralBasis, spec: np.ndarray) -> np.ndarray:
    """Pull retained-mode coefficients (a-units) out of an rfft spectrum."""
    flat = spec.reshape(spec.shape[:-b.n] + (-1,))
    c = np.take(flat, b._gather_flat, axis=-1)
    c.imag[..., b._gather_conj] *= -1.0     # conjugate the k_last < 0 half
    c *= TWO_PI ** (b.n / 2.0) / b.grid_m ** b.n
    return c


def to_spectral(phys: PhysicalField) -> VelocityField:
    b = phys.basis
    grid_axes = tuple(range(-b.n, 0))
    spec = sfft.rfftn(phys.values, axes=grid_axes, workers=_FFT_WORKERS)
    c = np.moveaxis(gather_spectrum(b, spec), -1, -2)
    return VelocityField(b, np.ascontiguousarray(c))


def transform(obj, direction: str):
    """Dispatch helper: direction ∈ {"to_physical", "to_spectral"}."""
    if direction == "to_physical":
        if not isinstance(obj, VelocityField):
            raise BasisMismatchError("to_physical expects a VelocityField")
        return to_physical(obj)
    if direction == "to_spectral":
        if not isinstance(obj, PhysicalField):
            raise BasisMismatchError("to_spectral expects a PhysicalField")
        return to_spectral(obj)
    raise ConfigError(f"unknown transform direction {direction!r}")


def quadrature_weight(basis: SpectralBasis) -> float:
    return (TWO_PI / basis.grid_m) ** basis.n


# ---------------------------------------------------------------------------
# norms and inner products

def inner_h(u: VelocityField, v: VelocityField) -> np.ndarray:
    u.basis.require_same(v.basis)
    return np.sum(np.real(np.conj(u.coeffs) * v.coeffs), axis=(-2, -1))


def norm_h_sq(u: VelocityField) -> np.ndarray:
    c = u.coeffs
    return np.sum(c.real ** 2 + c.imag ** 2, axis=(-2, -1))


def norm_v_sq(u: VelocityField) -> np.ndarray:
    c = u.coeffs
    return np.sum((c.real ** 2 + c.imag ** 2)
                  * u.basis.lam[:, None], axis=(-2, -1))


def norms_h_v_sq(u: VelocityField):
    """(‖u‖²_H, ‖u‖²_V) from a single |a(k)|² pass."""
    c = u.coeffs
    abs_sq = np.sum(c.real ** 2 + c.imag ** 2, axis=-1)
    return np.sum(abs_sq, axis=-1), np.sum(abs_sq * u.basis.lam, axis=-1)


def norm_lp(u: VelocityField, p: float) -> np.ndarray:
    if p < 1:
        raise ConfigError(f"Lp norm requires p ≥ 1, got {p}")
    grid = to_physical(u).values
    mag_sq = np.sum(grid ** 2, axis=-u.basis.n - 1)
    quad = quadrature_weight(u.basis) \
        * np.sum(mag_sq ** (p / 2.0), axis=tuple(range(-u.basis.n, 0)))
    return quad ** (1.0 / p)


def norm(u: VelocityField, kind: str, p: float = None) -> np.ndarray:
    if kind == "H":
        return np.sqrt(norm_h_sq(u))
    if kind == "V":
        return np.sqrt(norm_v_sq(u))
    if kind == "Lp":
        return norm_lp(u, p)
    raise ConfigError(f"unknown norm kind {kind!r}")


# ---------------------------------------------------------------------------
# random fields for property suites and initial conditions

def random_field(basis: SpectralBasis, rng: np.random.Generator,
                 amplitude: float = 1.0, decay: float = 2.0,
                 batch_shape=(), div_free: bool = True) -> VelocityField:
    """Gaussian coefficients with spectral decay |k|^(−decay).

    Real and mean-zero by construction; Leray-projected unless
    ``div_free`` is disabled (raw fields exercise the projector itself).
    """
    shape = tuple(batch_shape) + (basis.n_modes, basis.n)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    g *= amplitude * basis.lam[:, None] ** (-decay / 2.0) / np.sqrt(2.0)
    u = symmetrize_reality(VelocityField(basis, g))
    if div_free:
        u = leray_project(u)
    return u


def random_unit_field(basis: SpectralBasis, rng: np.random.Generator,
                      norm_h: float = 1.0, decay: float = 2.0) -> VelocityField:
    u = random_field(basis, rng, decay=decay)
    scale = norm_h / np.sqrt(norm_h_sq(u))
    return u * scale
