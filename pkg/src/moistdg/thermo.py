"""Thermodynamics of the dry-air / water-vapour / liquid-water mixture.

Constants, the equation of state, the Clausius-Clapeyron saturation vapour
pressure with constant specific heats, internal-energy/temperature
conversions and the potential temperatures used by the initial-condition
solvers and diagnostics.  All functions are pure, accept numpy arrays or
scalars, and take the constants record explicitly so they can be evaluated
per quadrature point without global state.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DomainError

__all__ = [
    "ThermoConstants",
    "DEFAULT_CONSTANTS",
    "saturation_vapour_pressure",
    "saturation_vapour_pressure_derivative",
    "saturation_vapour_density",
    "pressure",
    "internal_energy",
    "temperature_from_internal_energy",
    "saturation_mixing_ratio",
    "moist_gamma",
    "moist_sound_speed",
    "wet_equivalent_potential_temperature",
    "density_potential_temperature",
]


@dataclass(frozen=True)
class ThermoConstants:
    """Thermodynamic equation-of-state parameters (SI units).

    Defaults are the constant-specific-heat values for liquid water, dry air
    and water vapour, the reference saturation pressure/latent heat at the
    triple-point reference temperature, and standard gravity.  ``epsilon``
    is kept as an independent constant (its tabulated value 0.622 differs
    from R_d/R_v = 0.62198... in the fourth digit; initial conditions use
    the tabulated value).
    """

    c_l: float = 4218.0      # specific heat of liquid water [J/(kg K)]
    c_pd: float = 1005.0     # dry air, constant pressure
    c_pv: float = 1850.0     # water vapour, constant pressure
    c_vd: float = 718.0      # dry air, constant volume
    c_vv: float = 1390.0     # water vapour, constant volume
    e_ref: float = 610.7     # saturation vapour pressure at T_ref [Pa]
    L_ref: float = 2.835e6   # latent heat of vaporisation at T_ref [J/kg]
    R_d: float = 287.05      # gas constant, dry air [J/(kg K)]
    R_v: float = 461.51      # gas constant, water vapour [J/(kg K)]
    T_ref: float = 273.15    # reference temperature [K]
    p_ref: float = 1.0e5     # reference pressure [Pa]
    epsilon: float = 0.622   # R_d / R_v as tabulated
    g: float = 9.81          # gravitational acceleration [m/s^2]

    def __post_init__(self):
        for name in ("c_l", "c_pd", "c_pv", "c_vd", "c_vv", "e_ref",
                     "L_ref", "R_d", "R_v", "T_ref", "p_ref", "epsilon", "g"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"thermo constant {name} must be positive")
        if abs(self.epsilon - self.R_d / self.R_v) > 1e-3 * self.epsilon:
            raise ConfigurationError("epsilon inconsistent with R_d/R_v")

    # Derived coefficients of the closed-form saturation pressure
    #   e_s(T) = e_ref * (T/T_ref)^a * exp(b * (1/T_ref - 1/T))
    @property
    def es_exponent_a(self) -> float:
        return (self.c_pv - self.c_l) / self.R_v

    @property
    def es_coefficient_b(self) -> float:
        return (self.L_ref - (self.c_pv - self.c_l) * self.T_ref) / self.R_v

    @property
    def L_star(self) -> float:
        """Latent-energy offset L_ref - R_v T_ref in the internal energy."""
        return self.L_ref - self.R_v * self.T_ref

    def with_overrides(self, **kwargs) -> "ThermoConstants":
        return replace(self, **kwargs)


DEFAULT_CONSTANTS = ThermoConstants()


def _check_temperature(T):
    T = np.asarray(T, dtype=float)
    if not np.all(np.isfinite(T)) or np.any(T <= 0.0):
        raise DomainError("temperature must be finite and positive")
    return T


def saturation_vapour_pressure(T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """Saturation vapour pressure e_s(T) over liquid water [Pa].

    Closed form of the Clausius-Clapeyron equation with constant specific
    heats; both the power and the exponential factor equal one at ``T_ref``,
    so e_s(T_ref) = e_ref exactly.
    """
    T = _check_temperature(T)
    a = const.es_exponent_a
    b = const.es_coefficient_b
    arg = a * np.log(T / const.T_ref) + b * (1.0 / const.T_ref - 1.0 / T)
    out = const.e_ref * np.exp(arg)
    return out if out.ndim else float(out)


def saturation_vapour_pressure_derivative(T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """d e_s / dT, used by the condensation Newton iteration."""
    T = _check_temperature(T)
    es = saturation_vapour_pressure(T, const)
    out = es * (const.es_exponent_a / T + const.es_coefficient_b / T**2)
    return out if np.ndim(out) else float(out)


def saturation_vapour_density(T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """Saturation vapour density rho_vs = e_s(T) / (R_v T) [kg/m^3]."""
    T = _check_temperature(T)
    out = saturation_vapour_pressure(T, const) / (const.R_v * T)
    return out if np.ndim(out) else float(out)


def pressure(rho_d, rho_v, T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """Mixture pressure p = (rho_d R_d + rho_v R_v) T [Pa]."""
    return (np.asarray(rho_d) * const.R_d + np.asarray(rho_v) * const.R_v) * T


def internal_energy(rho_d, rho_v, rho_c, rho_r, T,
                    const: ThermoConstants = DEFAULT_CONSTANTS):
    """Internal energy density rho*e [J/m^3] (no kinetic contribution).

    rho e = (c_vd rho_d + c_vv rho_v + c_l (rho_c + rho_r)) (T - T_ref)
            + rho_v (L_ref - R_v T_ref)
    """
    heat_cap = (const.c_vd * np.asarray(rho_d) + const.c_vv * np.asarray(rho_v)
                + const.c_l * (np.asarray(rho_c) + np.asarray(rho_r)))
    return heat_cap * (np.asarray(T) - const.T_ref) + np.asarray(rho_v) * const.L_star


def temperature_from_internal_energy(rho_d, rho_v, rho_c, rho_r, rho_e,
                                     const: ThermoConstants = DEFAULT_CONSTANTS):
    """Exact algebraic inverse of :func:`internal_energy` at fixed densities."""
    heat_cap = (const.c_vd * np.asarray(rho_d) + const.c_vv * np.asarray(rho_v)
                + const.c_l * (np.asarray(rho_c) + np.asarray(rho_r)))
    if np.any(np.asarray(heat_cap) <= 0.0):
        raise DomainError("non-positive heat capacity")
    return const.T_ref + (np.asarray(rho_e) - np.asarray(rho_v) * const.L_star) / heat_cap


def saturation_mixing_ratio(p, T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """Saturation vapour mixing ratio q_vs = eps e_s / (p - e_s)."""
    es = saturation_vapour_pressure(T, const)
    p = np.asarray(p, dtype=float)
    if np.any(p <= es):
        raise DomainError("pressure must exceed the saturation vapour pressure")
    out = const.epsilon * es / (p - es)
    return out if out.ndim else float(out)


def moist_gamma(rho_d, rho_v, rho_c, rho_r,
                const: ThermoConstants = DEFAULT_CONSTANTS):
    """Adiabatic exponent of moist air,

    gamma_m = 1 + (rho_d R_d + rho_v R_v) /
                  (rho_d c_vd + rho_v c_vv + (rho_c + rho_r) c_l).

    Its dry-air limit is (c_vd + R_d)/c_vd.
    """
    num = np.asarray(rho_d) * const.R_d + np.asarray(rho_v) * const.R_v
    den = (np.asarray(rho_d) * const.c_vd + np.asarray(rho_v) * const.c_vv
           + (np.asarray(rho_c) + np.asarray(rho_r)) * const.c_l)
    return 1.0 + num / den


def moist_sound_speed(p, rho_d, rho_v, rho_c, rho_r,
                      const: ThermoConstants = DEFAULT_CONSTANTS):
    """Speed of sound c_m = sqrt(gamma_m p / rho) [m/s]."""
    rho = (np.asarray(rho_d) + np.asarray(rho_v)
           + np.asarray(rho_c) + np.asarray(rho_r))
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(rho <= 0.0):
        raise DomainError("sound speed needs positive pressure and density")
    gm = moist_gamma(rho_d, rho_v, rho_c, rho_r, const)
    out = np.sqrt(gm * p / rho)
    return out if out.ndim else float(out)


def wet_equivalent_potential_temperature(rho_d, rho_v, T, q_w,
                                         const: ThermoConstants = DEFAULT_CONSTANTS):
    """Wet equivalent potential temperature theta_e [K].

    theta_e = T (rho_d R_d T / p_ref)^(-R_d/(c_pd + c_l q_w))
                * exp( (L_ref + (c_pv - c_l)(T - T_ref)) rho_v
                       / ((c_pd + c_l q_w) rho_d T) )

    For cloud-free saturated states pass ``q_w = q_vs`` and
    ``rho_v = rho_vs`` (the exponent and denominator then carry the
    saturation mixing ratio instead of the total water fraction).
    """
    rho_d = np.asarray(rho_d, dtype=float)
    T = np.asarray(T, dtype=float)
    cp_eff = const.c_pd + const.c_l * np.asarray(q_w)
    p_d = rho_d * const.R_d * T
    power = np.power(p_d / const.p_ref, -const.R_d / cp_eff)
    latent = const.L_ref + (const.c_pv - const.c_l) * (T - const.T_ref)
    expo = np.exp(latent * np.asarray(rho_v) / (cp_eff * rho_d * T))
    out = T * power * expo
    return out if np.ndim(out) else float(out)


def density_potential_temperature(p, T, q_v,
                                  const: ThermoConstants = DEFAULT_CONSTANTS):
    """Density potential temperature theta_rho = T (p_ref/p)^(R_d/c_pd) (1 + q_v/eps)."""
    p = np.asarray(p, dtype=float)
    T = np.asarray(T, dtype=float)
    out = T * np.power(const.p_ref / p, const.R_d / const.c_pd) \
        * (1.0 + np.asarray(q_v) / const.epsilon)
    return out if np.ndim(out) else float(out)
