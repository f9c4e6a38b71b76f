"""Spectral Galerkin simulator and Monte Carlo verification laboratory
for damped stochastic Navier–Stokes-type dynamics (convective
Brinkman–Forchheimer) with degenerate low-mode noise.

Modules
-------
basis       divergence-free Fourier eigenbasis, transforms, norms
operators   Stokes/convection/absorption operators, monotonicity, constants
noise       additive and multiplicative low-mode noise, Wiener increments
integrator  semi-implicit Euler–Maruyama stepping with an energy ledger
coupling    controlled companion process, Girsanov weight, contraction
verify      semigroup, log-Harnack, gradient, moment, and ergodic checks
config/io/cli  experiment configuration, emission, checkpoints, CLI
"""

__version__ = "0.1.0"

from .basis import (SpectralBasis, VelocityField, build_basis,  # noqa: F401
                    random_field, random_unit_field, single_mode_field,
                    zero_field)
from .errors import (BasisMismatchError, BlowUpError,  # noqa: F401
                     ConfigError, RegimeError)
from .integrator import SimConfig, simulate  # noqa: F401
from .noise import make_additive, make_multiplicative  # noqa: F401
from .operators import PhysParams, harnack_constants  # noqa: F401
