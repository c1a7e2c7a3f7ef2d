"""The perturbation-form moist Euler system as a balance law.

State vector (component axis first, arbitrary trailing point axes):

    U = (rho_d', rho_m', rho_r', m_x, m_z, E')

against a hydrostatic base state (overbar quantities).  This module provides
the physical flux tensor, the gravity + microphysics source vector, the
wave-speed bound and local Lax-Friedrichs flux, the slip-wall boundary
state, and the pointwise secondary-variable recovery that feeds them.

Everything here is pure numpy and doubles as the reference implementation
for the compiled kernels.
"""

from dataclasses import dataclass

import numpy as np

from . import microphysics, thermo
from .errors import ConfigurationError
from .microphysics import DEFAULT_PARAMS, MicrophysicsParams
from .thermo import DEFAULT_CONSTANTS, ThermoConstants

__all__ = [
    "NCOMP",
    "BaseStateArrays",
    "SecondaryArrays",
    "recover_secondary",
    "physical_flux",
    "source_vector",
    "max_wave_speed",
    "lax_friedrichs_flux",
    "boundary_state",
]

NCOMP = 6        # rho_d', rho_m', rho_r', m_x, m_z, E'
I_RHO_D, I_RHO_M, I_RHO_R, I_MX, I_MZ, I_E = range(NCOMP)


@dataclass
class BaseStateArrays:
    """Hydrostatic base-state values at a batch of points (overbars)."""

    rho_d: np.ndarray
    rho_m: np.ndarray
    rho_r: np.ndarray
    p: np.ndarray
    E: np.ndarray
    T: np.ndarray

    @property
    def rho(self):
        return self.rho_d + self.rho_m + self.rho_r


@dataclass
class SecondaryArrays:
    """Recovered/derived pointwise quantities for a batch of states."""

    rho_d_tot: np.ndarray
    rho_m_tot: np.ndarray
    rho_r_tot: np.ndarray
    rho: np.ndarray
    ux: np.ndarray
    uz: np.ndarray
    rho_v: np.ndarray
    rho_c: np.ndarray
    T: np.ndarray
    p: np.ndarray
    p_pert: np.ndarray
    v_r: np.ndarray
    c_m: np.ndarray
    iterations: np.ndarray


def recover_secondary(U, base: BaseStateArrays, T_guess=None,
                      params: MicrophysicsParams = DEFAULT_PARAMS,
                      const: ThermoConstants = DEFAULT_CONSTANTS) -> SecondaryArrays:
    """Recover (rho_v, rho_c, T, p', u, v_r, c_m) from the conserved state.

    Total densities are clamped to >= 0 before entering the recovery and
    flux evaluation, so transient undershoots of the DG solution cannot
    produce undefined fractional powers; the raw perturbations in ``U`` are
    never modified.
    """
    U = np.asarray(U, dtype=float)
    rho_d_tot = np.maximum(base.rho_d + U[I_RHO_D], 0.0)
    rho_m_tot = np.maximum(base.rho_m + U[I_RHO_M], 0.0)
    rho_r_tot = np.maximum(base.rho_r + U[I_RHO_R], 0.0)
    rho = rho_d_tot + rho_m_tot + rho_r_tot
    ux = U[I_MX] / rho
    uz = U[I_MZ] / rho
    kinetic = 0.5 * (U[I_MX] * ux + U[I_MZ] * uz)
    rho_e = base.E + U[I_E] - kinetic

    if T_guess is None:
        T_guess = base.T
    shape = rho_d_tot.shape
    rho_v, rho_c, T, iters, _sat = microphysics.condensation_recover_batch(
        rho_d_tot.ravel(), rho_m_tot.ravel(), rho_r_tot.ravel(),
        np.asarray(rho_e, dtype=float).ravel(),
        np.broadcast_to(np.asarray(T_guess, dtype=float), shape).ravel(),
        params, const)
    rho_v = rho_v.reshape(shape)
    rho_c = rho_c.reshape(shape)
    T = T.reshape(shape)

    p = thermo.pressure(rho_d_tot, rho_v, T, const)
    p_pert = p - base.p
    v_r = microphysics.terminal_rain_velocity(rho_v, rho_c, rho_r_tot, params)
    c_m = np.sqrt(thermo.moist_gamma(rho_d_tot, rho_v, rho_c, rho_r_tot, const)
                  * p / rho)
    return SecondaryArrays(rho_d_tot, rho_m_tot, rho_r_tot, rho, ux, uz,
                           rho_v, rho_c, T, p, p_pert, v_r, c_m,
                           iters.reshape(shape))


def physical_flux(U, S: SecondaryArrays, base: BaseStateArrays,
                  const: ThermoConstants = DEFAULT_CONSTANTS):
    """Physical flux tensor F(U), shape (6, 2, ...)."""
    U = np.asarray(U, dtype=float)
    F = np.zeros((NCOMP, 2) + U.shape[1:])
    rain_flux = S.rho_r_tot * S.v_r           # rho_r v_r, the sedimentation flux
    H = base.E + U[I_E] + base.p + S.p_pert   # E + p
    ke = 0.5 * (S.ux * S.ux + S.uz * S.uz)

    F[I_RHO_D, 0] = S.rho_d_tot * S.ux
    F[I_RHO_D, 1] = S.rho_d_tot * S.uz
    F[I_RHO_M, 0] = S.rho_m_tot * S.ux
    F[I_RHO_M, 1] = S.rho_m_tot * S.uz
    F[I_RHO_R, 0] = S.rho_r_tot * S.ux
    F[I_RHO_R, 1] = S.rho_r_tot * S.uz - rain_flux
    F[I_MX, 0] = U[I_MX] * S.ux + S.p_pert
    F[I_MX, 1] = U[I_MX] * S.uz - rain_flux * S.ux
    F[I_MZ, 0] = U[I_MZ] * S.ux
    F[I_MZ, 1] = U[I_MZ] * S.uz - rain_flux * S.uz + S.p_pert
    F[I_E, 0] = H * S.ux
    F[I_E, 1] = H * S.uz - (const.c_l * (S.T - const.T_ref) + ke) * rain_flux
    return F


def source_vector(U, S: SecondaryArrays, base: BaseStateArrays,
                  params: MicrophysicsParams = DEFAULT_PARAMS,
                  const: ThermoConstants = DEFAULT_CONSTANTS,
                  microphysics_enabled: bool = True):
    """Source vector G(U), shape (6, ...).

    The moist and rain rows carry the same microphysics exchange with
    opposite signs (computed once and negated, so their sum is exactly
    zero); gravity acts on the momentum and energy rows in perturbation
    form.
    """
    U = np.asarray(U, dtype=float)
    G = np.zeros((NCOMP,) + U.shape[1:])
    if microphysics_enabled:
        rho_vs = thermo.saturation_vapour_density(S.T, const)
        s_ev = microphysics.source_evaporation(S.T, S.rho_r_tot, rho_vs,
                                               S.rho_v, const)
        s_au = microphysics.source_autoconversion(S.rho_c, S.rho, params)
        s_ac = microphysics.source_accretion(S.rho_c, S.rho_r_tot)
        net = s_ev - s_au - s_ac
        G[I_RHO_M] = net
        G[I_RHO_R] = -net
    rho_pert = U[I_RHO_D] + U[I_RHO_M] + U[I_RHO_R]
    G[I_MZ] = -rho_pert * const.g
    G[I_E] = -const.g * U[I_MZ]
    return G


def _one_sided_speed(S: SecondaryArrays, nx: float, nz: float):
    return np.abs(S.ux * nx + S.uz * nz) + np.abs(S.v_r * nz) + S.c_m


def max_wave_speed(S_minus: SecondaryArrays, S_plus: SecondaryArrays,
                   nx: float, nz: float):
    """Lax-Friedrichs dissipation speed: max over both sides of
    |u.n| + |v_r e_z.n| + c_m."""
    return np.maximum(_one_sided_speed(S_minus, nx, nz),
                      _one_sided_speed(S_plus, nx, nz))


def lax_friedrichs_flux(U_minus, U_plus, S_minus, S_plus,
                        base: BaseStateArrays, nx: float, nz: float,
                        const: ThermoConstants = DEFAULT_CONSTANTS):
    """Local Lax-Friedrichs numerical flux through a facet with normal n.

    F_n = 1/2 (F(U^-) + F(U^+)) . n + Lambda/2 (U^- - U^+).
    """
    F_m = physical_flux(U_minus, S_minus, base, const)
    F_p = physical_flux(U_plus, S_plus, base, const)
    lam = max_wave_speed(S_minus, S_plus, nx, nz)
    Fn = (F_m[:, 0] + F_p[:, 0]) * (0.5 * nx) + (F_m[:, 1] + F_p[:, 1]) * (0.5 * nz)
    return Fn + 0.5 * lam * (np.asarray(U_minus) - np.asarray(U_plus))


def boundary_state(U_minus, nx: float, nz: float, kind: str = "slip_wall"):
    """Exterior ghost state for a boundary facet with outward normal n."""
    if kind != "slip_wall":
        raise ConfigurationError(f"unknown boundary kind {kind!r}")
    U_minus = np.asarray(U_minus, dtype=float)
    U_plus = U_minus.copy()
    mn = U_minus[I_MX] * nx + U_minus[I_MZ] * nz
    U_plus[I_MX] = U_minus[I_MX] - 2.0 * mn * nx
    U_plus[I_MZ] = U_minus[I_MZ] - 2.0 * mn * nz
    return U_plus
