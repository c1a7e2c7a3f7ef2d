"""Kessler warm-rain microphysics and the implicit-condensation recovery.

The source terms (evaporation, auto-conversion, accretion) and the terminal
rain velocity follow the bulk warm-rain closure; the recovery solves the
pointwise nonlinear system that splits the transported moist density
rho_m = rho_v + rho_c into vapour and cloud water under the constraint that
vapour never exceeds saturation, returning the temperature along the way.

Two equivalent implementations of the recovery are provided: a scalar
reference version (readable, used as the behavioural contract) and a
vectorised batch version used by the numpy assembly backend.  The compiled
kernels carry a third copy; all three are cross-checked in the test suite
against an independent bisection oracle.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import thermo
from .errors import ConfigurationError, DomainError, RecoveryError
from .thermo import DEFAULT_CONSTANTS, ThermoConstants

__all__ = [
    "MicrophysicsParams",
    "DEFAULT_PARAMS",
    "RecoveredState",
    "source_evaporation",
    "source_autoconversion",
    "source_accretion",
    "terminal_rain_velocity",
    "condensation_recover",
    "condensation_recover_batch",
]

GAMMA_4_5 = math.gamma(4.5)

# Admissible temperature window for the recovery root
T_LO = 150.0
T_HI = 400.0


@dataclass(frozen=True)
class MicrophysicsParams:
    """Kessler closure parameters and Newton-solver settings.

    ``rho_w_mode`` selects the water density entering the terminal-velocity
    formula: ``"total_water"`` uses rho_w = rho_v + rho_c + rho_r as printed
    in the source material, ``"liquid_constant"`` substitutes the density of
    liquid water (1000 kg/m^3) for sensitivity studies.
    """

    q_au: float = 0.0          # auto-conversion threshold (mixing ratio)
    N0r: float = 8.0e6         # raindrop size-distribution parameter [1/m^4]
    v0r: float = 130.0         # fall-speed coefficient [m^(1/2)/s]
    newton_tol: float = 1e-12  # relative residual tolerance of the recovery
    newton_max_iter: int = 25
    rho_w_mode: str = "total_water"

    def __post_init__(self):
        if self.q_au < 0.0 or self.N0r <= 0.0 or self.v0r <= 0.0:
            raise ConfigurationError("invalid Kessler parameters")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ConfigurationError("invalid Newton settings")
        if self.rho_w_mode not in ("total_water", "liquid_constant"):
            raise ConfigurationError(f"unknown rho_w_mode {self.rho_w_mode!r}")

    @property
    def vr_prefactor(self) -> float:
        """v0r Gamma(4.5)/6 * (pi N0r)^(-1/8); multiply by (rho_r/rho_w)^(1/8)."""
        return self.v0r * GAMMA_4_5 / 6.0 * (math.pi * self.N0r) ** -0.125

    def with_overrides(self, **kwargs) -> "MicrophysicsParams":
        return replace(self, **kwargs)


DEFAULT_PARAMS = MicrophysicsParams()


@dataclass(frozen=True)
class RecoveredState:
    """Result of the implicit-condensation recovery at one point."""

    rho_v: float
    rho_c: float
    T: float
    iterations: int
    saturated: bool


def source_evaporation(T, rho_r, rho_vs, rho_v,
                       const: ThermoConstants = DEFAULT_CONSTANTS):
    """Evaporation rate of rain into undersaturated air [kg/(m^3 s)].

    Clamped to >= 0: condensation onto rain is not part of the closure, and
    in saturated air (rho_v = rho_vs) the rate vanishes.
    """
    rr = np.maximum(np.asarray(rho_r, dtype=float), 0.0)
    rate = (3.86e-3 - 9.41e-5 * (np.asarray(T) - const.T_ref)) \
        * (1.0 + 9.1 * rr ** 0.1875) \
        * (np.asarray(rho_vs) - np.asarray(rho_v)) * np.sqrt(rr)
    out = np.maximum(rate, 0.0)
    return out if out.ndim else float(out)


def source_autoconversion(rho_c, rho, params: MicrophysicsParams = DEFAULT_PARAMS):
    """Auto-conversion of cloud water to rain, 0.001 max(rho_c - q_au rho, 0)."""
    rc = np.maximum(np.asarray(rho_c, dtype=float), 0.0)
    out = 1e-3 * np.maximum(rc - params.q_au * np.asarray(rho), 0.0)
    return out if out.ndim else float(out)


def source_accretion(rho_c, rho_r):
    """Collection of cloud water by falling rain, 1.72 rho_c rho_r^(7/8)."""
    rc = np.maximum(np.asarray(rho_c, dtype=float), 0.0)
    rr = np.maximum(np.asarray(rho_r, dtype=float), 0.0)
    out = 1.72 * rc * rr ** 0.875
    return out if out.ndim else float(out)


def terminal_rain_velocity(rho_v, rho_c, rho_r,
                           params: MicrophysicsParams = DEFAULT_PARAMS):
    """Mean terminal fall speed of rain relative to the air [m/s].

    v_r = v0r Gamma(4.5)/6 * (rho_r / (pi rho_w N0r))^(1/8), zero when no
    rain (or no water at all) is present.
    """
    rr = np.maximum(np.asarray(rho_r, dtype=float), 0.0)
    if params.rho_w_mode == "liquid_constant":
        rho_w = np.full_like(rr, 1000.0)
    else:
        rho_w = (np.maximum(np.asarray(rho_v, dtype=float), 0.0)
                 + np.maximum(np.asarray(rho_c, dtype=float), 0.0) + rr)
    active = (rr > 0.0) & (rho_w > 0.0)
    ratio = np.where(active, rr / np.where(rho_w > 0.0, rho_w, 1.0), 0.0)
    out = np.where(active, params.vr_prefactor * ratio ** 0.125, 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Implicit condensation recovery
# ---------------------------------------------------------------------------
#
# Unknowns (rho_v, rho_c, T) solve
#     rho_v = min(rho_vs(T), rho_m),      rho_c = rho_m - rho_v,
#     rho_e = (c_vd rho_d + c_vv rho_v + c_l (rho_c + rho_r))(T - T_ref)
#             + rho_v (L_ref - R_v T_ref).
# Substituting the first two relations reduces the system to one strictly
# increasing scalar residual in T, solved by damped Newton with bracket
# maintenance and a bisection fallback.


def _energy_residual(T, rho_d, rho_m, rho_r, rho_e, const):
    """Scalar residual R(T) and its derivative; R is strictly increasing."""
    rho_vs = thermo.saturation_vapour_density(T, const)
    if rho_vs < rho_m:
        rho_v, rho_c = rho_vs, rho_m - rho_vs
        drho_v = rho_vs * (const.es_exponent_a / T
                           + const.es_coefficient_b / T**2 - 1.0 / T)
    else:
        rho_v, rho_c = rho_m, 0.0
        drho_v = 0.0
    heat_cap = const.c_vd * rho_d + const.c_vv * rho_v + const.c_l * (rho_c + rho_r)
    res = heat_cap * (T - const.T_ref) + rho_v * const.L_star - rho_e
    dres = heat_cap + drho_v * ((const.c_vv - const.c_l) * (T - const.T_ref)
                                + const.L_star)
    return res, dres


def condensation_recover(rho_d, rho_m, rho_r, rho_e, T_guess,
                         params: MicrophysicsParams = DEFAULT_PARAMS,
                         const: ThermoConstants = DEFAULT_CONSTANTS) -> RecoveredState:
    """Recover (rho_v, rho_c, T) from (rho_d, rho_m, rho_r, rho_e).

    The unsaturated branch is closed-form; the saturated branch runs damped
    Newton from ``T_guess`` inside the bracket [150 K, 400 K], falling back
    to bisection when Newton stalls.  One extra Newton step is taken after
    the tolerance is met so the residual lands at rounding level (the
    discrete hydrostatic balance of the at-rest tests depends on this).

    The returned pair satisfies ``rho_v + rho_c == rho_m`` exactly in
    floating point (see the compensation step at the end).
    """
    if not rho_d > 0.0:
        raise DomainError(f"recovery requires rho_d > 0, got {rho_d}")
    if rho_m < 0.0 or rho_r < 0.0:
        raise DomainError("recovery requires rho_m, rho_r >= 0")

    # Unsaturated closed form: all moisture is vapour.
    heat_cap_u = const.c_vd * rho_d + const.c_vv * rho_m + const.c_l * rho_r
    # R(T) cancels terms of size ~heat_cap*T_ref, so the tolerance must carry
    # that scale: near the altitude where rho_e changes sign a floor tied to
    # |rho_e| alone drops below the attainable rounding level of R.
    tol = params.newton_tol * (abs(rho_e) + heat_cap_u * const.T_ref)
    T_lin = const.T_ref + (rho_e - rho_m * const.L_star) / heat_cap_u
    if rho_m == 0.0:
        _check_window(T_lin)
        return RecoveredState(0.0, 0.0, T_lin, 0, False)
    if T_lin > 0.0 and thermo.saturation_vapour_density(T_lin, const) >= rho_m:
        _check_window(T_lin)
        return RecoveredState(rho_m, 0.0, T_lin, 0, False)

    # Saturated branch: bracketed Newton on the monotone residual.
    lo, hi = T_LO, T_HI
    T = min(max(T_guess, lo), hi)
    iterations = 0
    res = dres = float("nan")
    converged = False
    for _ in range(params.newton_max_iter):
        res, dres = _energy_residual(T, rho_d, rho_m, rho_r, rho_e, const)
        iterations += 1
        if abs(res) <= tol:
            converged = True
            break
        if res > 0.0:
            hi = T
        else:
            lo = T
        T_next = T - res / dres if dres > 0.0 else lo
        if not lo < T_next < hi:
            T_next = 0.5 * (lo + hi)
        T = T_next
    if not converged:
        # Bisection fallback: the bracket shrinks unconditionally.
        for _ in range(200):
            res, dres = _energy_residual(T, rho_d, rho_m, rho_r, rho_e, const)
            iterations += 1
            if abs(res) <= tol:
                converged = True
                break
            if res > 0.0:
                hi = T
            else:
                lo = T
            T = 0.5 * (lo + hi)
        if not converged:
            raise RecoveryError("condensation recovery did not converge",
                                residual=res)
    if dres > 0.0:
        T = T - res / dres  # polish

    rho_vs = thermo.saturation_vapour_density(T, const)
    if rho_vs < rho_m:
        rho_c = rho_m - rho_vs
        rho_v = rho_m - rho_c   # exact complement: rho_v + rho_c == rho_m
        saturated = True
    else:
        rho_v, rho_c = rho_m, 0.0
        saturated = False
    return RecoveredState(rho_v, rho_c, T, iterations, saturated)


def _check_window(T):
    if not T_LO <= T <= T_HI:
        raise RecoveryError(
            f"recovered temperature {T:.2f} K outside [{T_LO}, {T_HI}] K")


def condensation_recover_batch(rho_d, rho_m, rho_r, rho_e, T_guess,
                               params: MicrophysicsParams = DEFAULT_PARAMS,
                               const: ThermoConstants = DEFAULT_CONSTANTS):
    """Vectorised recovery over flat arrays.

    Returns ``(rho_v, rho_c, T, iterations, saturated)`` arrays.  Same
    branch logic as :func:`condensation_recover`, with the Newton loop run
    on the shrinking active set.
    """
    rho_d = np.asarray(rho_d, dtype=float)
    rho_m = np.asarray(rho_m, dtype=float)
    rho_r = np.asarray(rho_r, dtype=float)
    rho_e = np.asarray(rho_e, dtype=float)
    if np.any(rho_d <= 0.0):
        raise DomainError("recovery requires rho_d > 0 everywhere")
    if np.any(rho_m < 0.0) or np.any(rho_r < 0.0):
        raise DomainError("recovery requires rho_m, rho_r >= 0")

    n = rho_d.shape[0]
    heat_cap_u = const.c_vd * rho_d + const.c_vv * rho_m + const.c_l * rho_r
    # same scale reasoning as the scalar version
    tol = params.newton_tol * (np.abs(rho_e) + heat_cap_u * const.T_ref)
    T_lin = const.T_ref + (rho_e - rho_m * const.L_star) / heat_cap_u
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        rho_vs_lin = np.where(
            T_lin > 0.0,
            thermo.saturation_vapour_pressure(np.maximum(T_lin, 1e-3), const)
            / (const.R_v * np.maximum(T_lin, 1e-3)),
            -1.0)
    unsat = (rho_m == 0.0) | ((T_lin > 0.0) & (rho_vs_lin >= rho_m))

    T = np.where(unsat, T_lin, np.clip(np.asarray(T_guess, dtype=float), T_LO, T_HI))
    iterations = np.zeros(n, dtype=np.int64)

    active = ~unsat
    if np.any(active):
        lo = np.full(n, T_LO)
        hi = np.full(n, T_HI)
        res = np.zeros(n)
        dres = np.ones(n)
        for _ in range(params.newton_max_iter + 200):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            r, dr = _energy_residual_batch(T[idx], rho_d[idx], rho_m[idx],
                                           rho_r[idx], rho_e[idx], const)
            res[idx], dres[idx] = r, dr
            iterations[idx] += 1
            done = np.abs(r) <= tol[idx]
            still = idx[~done]
            active[idx[done]] = False
            if still.size == 0:
                break
            pos = res[still] > 0.0
            hi[still[pos]] = T[still[pos]]
            lo[still[~pos]] = T[still[~pos]]
            with np.errstate(divide="ignore", invalid="ignore"):
                T_next = T[still] - res[still] / dres[still]
            bad = ~((lo[still] < T_next) & (T_next < hi[still]))
            T_next[bad] = 0.5 * (lo[still[bad]] + hi[still[bad]])
            T[still] = T_next
        if np.any(active):
            raise RecoveryError("batch condensation recovery did not converge",
                                residual=float(np.max(np.abs(res[active]))))
        sat_idx = np.flatnonzero(~unsat)
        ok = dres[sat_idx] > 0.0
        T[sat_idx[ok]] -= res[sat_idx[ok]] / dres[sat_idx[ok]]  # polish

    _check_window_batch(T)

    rho_vs = thermo.saturation_vapour_density(np.maximum(T, 1.0), const)
    saturated = rho_vs < rho_m
    rho_c = np.where(saturated, rho_m - rho_vs, 0.0)
    rho_v = rho_m - rho_c   # exact complement, as in the scalar version
    return rho_v, rho_c, T, iterations, saturated


def _energy_residual_batch(T, rho_d, rho_m, rho_r, rho_e, const):
    es = thermo.saturation_vapour_pressure(T, const)
    rho_vs = es / (const.R_v * T)
    sat = rho_vs < rho_m
    rho_v = np.where(sat, rho_vs, rho_m)
    rho_c = np.where(sat, rho_m - rho_vs, 0.0)
    drho_v = np.where(sat, rho_vs * (const.es_exponent_a / T
                                     + const.es_coefficient_b / T**2 - 1.0 / T), 0.0)
    heat_cap = const.c_vd * rho_d + const.c_vv * rho_v + const.c_l * (rho_c + rho_r)
    res = heat_cap * (T - const.T_ref) + rho_v * const.L_star - rho_e
    dres = heat_cap + drho_v * ((const.c_vv - const.c_l) * (T - const.T_ref)
                                + const.L_star)
    return res, dres


def _check_window_batch(T):
    if np.any((T < T_LO) | (T > T_HI)):
        bad = float(T[np.argmax((T < T_LO) | (T > T_HI))])
        raise RecoveryError(
            f"recovered temperature {bad:.2f} K outside [{T_LO}, {T_HI}] K")
