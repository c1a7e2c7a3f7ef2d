"""Explicit time integration: Euler, SSPRK(4,3), sponge layer, dt advice.

The integrators are written against a right-hand-side callback
``rhs(u, weight)`` returning du/dt for the coefficient array ``u``.  The
``weight`` argument is the quadrature weight (in seconds) this stage
carries in the completed step -- the residual assembler uses it to
accumulate time-integrated boundary fluxes (rain fallout) consistently
with the Runge-Kutta combination; pure test callbacks may ignore it.

SSPRK(4,3) is the four-stage, third-order strong-stability-preserving
scheme in low-storage form

    u1      = u  + dt/2 L(u)
    u2      = u1 + dt/2 L(u1)
    u3      = 2/3 u + 1/3 u2 + dt/6 L(u2)
    u^{n+1} = u3 + dt/2 L(u3)

whose stage weights are (1/6, 1/6, 1/6, 1/2) and whose stability
polynomial is 1 + z + z^2/2 + z^3/6 + z^4/48.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import Discretization, eval_volume, l2_project
from .errors import ConfigurationError, NumericalError

__all__ = [
    "SpongeLayer",
    "SSPRK43_WEIGHTS",
    "explicit_euler_step",
    "ssprk43_step",
    "sponge_profile",
    "apply_sponge",
    "estimate_dt",
]

SSPRK43_WEIGHTS = (1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5)


def explicit_euler_step(u, dt: float, rhs):
    """One forward Euler step u + dt * rhs(u)."""
    if not dt > 0.0:
        raise ConfigurationError("dt must be positive")
    return u + dt * np.asarray(rhs(u, dt))


def ssprk43_step(u, dt: float, rhs):
    """One SSPRK(4,3) step."""
    if not dt > 0.0:
        raise ConfigurationError("dt must be positive")
    half = 0.5 * dt
    w1, w2, w3, w4 = (w * dt for w in SSPRK43_WEIGHTS)
    u1 = u + half * np.asarray(rhs(u, w1))
    u2 = u1 + half * np.asarray(rhs(u1, w2))
    u3 = (2.0 / 3.0) * u + (1.0 / 3.0) * u2 + (dt / 6.0) * np.asarray(rhs(u2, w3))
    return u3 + half * np.asarray(rhs(u3, w4))


@dataclass(frozen=True)
class SpongeLayer:
    """Rayleigh-damping layer below the domain top."""

    z_D: float      # layer bottom [m]
    z_T: float      # domain top [m]
    alpha: float    # relaxation amplitude

    def __post_init__(self):
        # alpha = 0 is allowed and makes the sponge a no-op
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("sponge alpha must be in [0, 1]")
        if not self.z_D < self.z_T:
            raise ConfigurationError("sponge needs z_D < z_T")


def sponge_profile(z, sponge: SpongeLayer):
    """Blending coefficient delta_R(z): 0 below z_D, alpha at z_T."""
    z = np.asarray(z, dtype=float)
    s = (z - sponge.z_D) / (sponge.z_T - sponge.z_D)
    delta = 0.5 * sponge.alpha * (1.0 - np.cos(np.pi * np.clip(s, 0.0, 1.0)))
    return np.where(z >= sponge.z_D, delta, 0.0)


def apply_sponge(disc: Discretization, coef, sponge: SpongeLayer):
    """Relax the perturbation toward the base state via L2 projection.

    The pointwise blend (1 - delta_R) U + delta_R * 0 (base-state values
    correspond to zero perturbation) is evaluated at the volume quadrature
    points and projected back onto the basis.
    """
    delta_col = sponge_profile(disc.zq, sponge)        # (nz, nq)
    if np.all(delta_col == 0.0):
        return np.asarray(coef).copy()
    m = disc.mesh
    vals = eval_volume(disc, coef)                     # (E, C, nq, nq)
    fac = 1.0 - delta_col                              # (nz, nqz)
    fac_e = np.repeat(fac, m.nx, axis=0)               # (E, nqz)
    vals *= fac_e[:, None, None, :]
    return l2_project(disc, vals)


def estimate_dt(mesh, k: int, cfl: float, lambda_K):
    """Advisory time step cfl * min_K h_K / (Lambda_K (2k+1)).

    ``lambda_K`` holds the per-element maximum wave speed (|u.n| bound +
    sound speed + rain fall speed).
    """
    if not cfl > 0.0:
        raise ConfigurationError("cfl must be positive")
    lam = np.asarray(lambda_K, dtype=float)
    if not np.all(np.isfinite(lam)) or np.any(lam < 0.0):
        raise NumericalError("non-finite wave speed in dt estimate")
    h = min(mesh.hx, mesh.hz)
    lam_max = lam.max()
    if lam_max == 0.0:
        raise NumericalError("zero wave speed everywhere; dt unbounded")
    return cfl * h / (lam_max * (2 * k + 1))
