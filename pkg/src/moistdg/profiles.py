"""Hydrostatic base states and pointwise initial-condition solvers.

Base states are one-dimensional columns ``(p(z), rho_d, rho_v, rho_c, T)``
obtained by integrating the hydrostatic pressure equation

    dp/dz = -w(z, p) g

with classic RK4 on a uniform fine grid, where the weight ``w`` and the
algebraic closure relating ``p`` to the densities and temperature depend on
how the column is specified (constant total water at saturation, saturated
without clouds, a prescribed temperature profile, or a prescribed relative
humidity and dry potential temperature).  Each closure reduces to a scalar
root-find which is solved by damped Newton iteration with a bisection
fallback, using the previous node's solution as the initial guess.

Evaluation at arbitrary heights interpolates the pressure with a cubic
spline and then re-solves the algebraic closure pointwise, so that the
returned state satisfies the generating equations (state law, saturation,
stratification target) to solver tolerance rather than to interpolation
accuracy.  This keeps the discrete hydrostatic balance of the perturbation
formulation at the rounding level.

The pointwise perturbation constructors (gravity-wave theta_e bump,
buoyancy-matched warm bubble, humidity bubble) return vectorised callbacks
``(x, z) -> U`` producing the six conserved perturbation components, ready
for L2 projection onto the DG space.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import ConfigurationError, ProfileError
from .model import BaseStateArrays
from .thermo import (
    DEFAULT_CONSTANTS,
    ThermoConstants,
    internal_energy,
    saturation_vapour_pressure,
    wet_equivalent_potential_temperature,
    density_potential_temperature,
)

#: Resolution of the stored profile grid [m].
DZ_PROFILE = 10.0

#: Temperature window for all scalar root-finds [K].
T_WINDOW = (150.0, 400.0)


# ---------------------------------------------------------------------------
# scalar root-finding (vectorised damped Newton + bisection fallback)
# ---------------------------------------------------------------------------

def _vec_newton(residual, guess, lo, hi, scale=1.0, rtol=1e-13, max_iter=60,
                context="scalar solve"):
    """Solve residual(x) = 0 component-wise for an array of unknowns.

    Damped Newton iteration with a finite-difference slope; steps that leave
    ``[lo, hi]`` or fail to reduce ``|f|`` are halved.  Points that have not
    met ``|f| <= rtol * scale`` when the iteration stagnates are retried
    with ``scipy.optimize.brentq`` on a sign-changing sub-bracket.

    Parameters
    ----------
    residual : callable
        Vectorised map ``x -> f(x)``; may return NaN outside its domain.
    guess : ndarray
        Initial iterate, clipped into ``[lo, hi]``.
    scale : float or ndarray
        Magnitude of the target used for the relative tolerance.

    Returns
    -------
    ndarray
        Root array with the shape of ``guess``.

    Raises
    ------
    ProfileError
        If any component cannot be solved.
    """
    x = np.clip(np.asarray(guess, dtype=float), lo, hi).copy()
    if x.ndim == 0:
        x = x.reshape(1)
        squeeze = True
    else:
        squeeze = False
    atol = rtol * np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    f = residual(x)
    bad = ~np.isfinite(f)
    if np.any(bad):
        # nudge iterates whose residual is undefined toward the window centre
        x[bad] = 0.5 * (lo + hi)
        f = residual(x)
    done = np.abs(f) <= atol

    for _ in range(max_iter):
        if np.all(done):
            break
        h = 1e-6 * np.maximum(np.abs(x), 1.0)
        slope = (residual(x + h) - residual(x - h)) / (2.0 * h)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(done | (slope == 0.0) | ~np.isfinite(slope),
                            0.0, -f / np.where(slope == 0.0, 1.0, slope))
        x_new = np.clip(x + step, lo, hi)
        f_new = residual(x_new)
        # halve rejected steps (worse or non-finite residual) per point
        for _damp in range(40):
            worse = ~done & (~np.isfinite(f_new) | (np.abs(f_new) > np.abs(f)))
            if not np.any(worse):
                break
            x_new = np.where(worse, 0.5 * (x_new + x), x_new)
            f_new = np.where(worse, residual(x_new), f_new)
        moved = np.abs(x_new - x) > 1e-16 * np.maximum(np.abs(x), 1.0)
        x, f = x_new, f_new
        newly = np.abs(f) <= atol
        stuck = ~newly & ~moved
        done = done | newly | stuck

    miss = np.abs(f) > atol
    if np.any(miss):
        idx = np.nonzero(miss)[0]
        for i in idx:
            x[i] = _bisect_fallback(residual, x[i], lo, hi, i, context)
        f = residual(x)
        miss = np.abs(f) > 1e3 * atol
        if np.any(miss):
            j = int(np.nonzero(miss)[0][0])
            raise ProfileError(
                f"{context}: no convergence (residual {float(f[j]):.3e} "
                f"at component {j})")
    return x[0] if squeeze else x


def _bisect_fallback(residual, x0, lo, hi, index, context):
    """Bracket a sign change near x0 on a coarse scan and run brentq."""
    def f1(t):
        r = residual(np.array([t]))[0]
        return r if np.isfinite(r) else np.nan

    grid = np.linspace(lo, hi, 81)
    vals = np.array([f1(t) for t in grid])
    ok = np.isfinite(vals)
    sign_change = ok[:-1] & ok[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:]))
    if not np.any(sign_change):
        raise ProfileError(
            f"{context}: no bracket in [{lo}, {hi}] for component {index}")
    # prefer the bracket closest to the Newton iterate
    cand = np.nonzero(sign_change)[0]
    pick = cand[np.argmin(np.abs(0.5 * (grid[cand] + grid[cand + 1]) - x0))]
    return brentq(f1, grid[pick], grid[pick + 1], xtol=1e-13, rtol=8.9e-16)


# ---------------------------------------------------------------------------
# profile container
# ---------------------------------------------------------------------------

@dataclass
class ProfileValues:
    """Arrays of base-state quantities evaluated at a set of heights."""

    p: np.ndarray
    rho_d: np.ndarray
    rho_v: np.ndarray
    rho_c: np.ndarray
    rho_r: np.ndarray
    T: np.ndarray
    E: np.ndarray

    @property
    def rho_m(self):
        return self.rho_v + self.rho_c

    @property
    def rho(self):
        return self.rho_d + self.rho_m + self.rho_r


@dataclass
class HydrostaticProfile:
    """Tabulated hydrostatic column with pointwise-consistent evaluation.

    ``closure(z, p, guess)`` maps height/pressure arrays to
    ``(rho_d, rho_v, rho_c, T, guess_next)`` where ``guess_next`` is the
    continuation variable threaded between solves (temperature for the
    theta_e/temperature closures, vapour density for the humidity closure).
    """

    z: np.ndarray
    p: np.ndarray
    rho_d: np.ndarray
    rho_v: np.ndarray
    rho_c: np.ndarray
    rho_r: np.ndarray
    T: np.ndarray
    E: np.ndarray
    closure: Callable
    guess_values: np.ndarray
    const: ThermoConstants = DEFAULT_CONSTANTS
    target_fn: Optional[Callable] = None
    _p_spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        if self.z.size < 4:
            raise ConfigurationError("profile needs at least 4 nodes "
                                     "for cubic interpolation")
        self._p_spline = CubicSpline(self.z, self.p)

    @property
    def z_top(self) -> float:
        return float(self.z[-1])

    def evaluate(self, z) -> ProfileValues:
        """Base state at arbitrary heights: spline p, re-solved closure."""
        zq = np.asarray(z, dtype=float)
        flat = np.atleast_1d(zq).ravel()
        if flat.size and (flat.min() < self.z[0] - 1e-9
                          or flat.max() > self.z[-1] + 1e-9):
            raise ConfigurationError(
                f"height {flat.min():.3f}..{flat.max():.3f} outside profile "
                f"range [{self.z[0]:.1f}, {self.z[-1]:.1f}]")
        p = self._p_spline(flat)
        guess = np.interp(flat, self.z, self.guess_values)
        rho_d, rho_v, rho_c, T, _ = self.closure(flat, p, guess)
        rho_r = np.zeros_like(flat)
        E = internal_energy(rho_d, rho_v, rho_c, rho_r, T, const=self.const)
        shape = zq.shape
        return ProfileValues(*(np.asarray(a, dtype=float).reshape(shape)
                               for a in (p, rho_d, rho_v, rho_c, rho_r, T, E)))

    def base_state(self, z) -> BaseStateArrays:
        """Adapter producing the arrays consumed by the spatial operator."""
        v = self.evaluate(z)
        return BaseStateArrays(rho_d=v.rho_d, rho_m=v.rho_v + v.rho_c,
                               rho_r=v.rho_r, p=v.p, E=v.E, T=v.T)

    def write_csv(self, path):
        """Dump the node table as CSV columns (z, p, rho_d, rho_v, rho_c, T)."""
        data = np.column_stack([self.z, self.p, self.rho_d, self.rho_v,
                                self.rho_c, self.T])
        np.savetxt(path, data, delimiter=",", fmt="%.17g",
                   header="z,p,rho_d,rho_v,rho_c,T", comments="")


# ---------------------------------------------------------------------------
# RK4 column integration
# ---------------------------------------------------------------------------

def _profile_grid(z_top, dz):
    if not z_top > 0.0 or not dz > 0.0:
        raise ConfigurationError("profile height and resolution must be positive")
    n = int(np.ceil(z_top / dz - 1e-12))
    return dz * np.arange(n + 1)


def _integrate_column(z_nodes, p_surface, closure, weight, guess0, g):
    """March dp/dz = -weight * g upward with RK4, closure-solving each stage.

    ``closure`` is vectorised; stages call it with singleton arrays.  Returns
    per-node arrays (p, rho_d, rho_v, rho_c, T, guess).
    """
    n = z_nodes.size
    out = {k: np.empty(n) for k in ("p", "rho_d", "rho_v", "rho_c", "T", "g")}

    def solve(z, p, guess):
        rd, rv, rc, T, gnext = closure(np.array([z]), np.array([p]),
                                       np.array([guess]))
        return float(rd[0]), float(rv[0]), float(rc[0]), float(T[0]), \
            float(gnext[0])

    p = float(p_surface)
    guess = float(guess0)
    state = solve(z_nodes[0], p, guess)
    for i in range(n):
        rd, rv, rc, T, guess = state
        out["p"][i] = p
        out["rho_d"][i], out["rho_v"][i], out["rho_c"][i] = rd, rv, rc
        out["T"][i] = T
        out["g"][i] = guess
        if i == n - 1:
            break
        z0, h = z_nodes[i], z_nodes[i + 1] - z_nodes[i]
        k1 = -g * weight(rd, rv, rc)
        s = solve(z0 + 0.5 * h, p + 0.5 * h * k1, guess)
        k2 = -g * weight(s[0], s[1], s[2])
        s = solve(z0 + 0.5 * h, p + 0.5 * h * k2, s[4])
        k3 = -g * weight(s[0], s[1], s[2])
        s = solve(z0 + h, p + h * k3, s[4])
        k4 = -g * weight(s[0], s[1], s[2])
        p = p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state = solve(z_nodes[i + 1], p, s[4])
    return out


def _finish_profile(z, cols, closure, const, target_fn):
    rho_r = np.zeros_like(z)
    E = internal_energy(cols["rho_d"], cols["rho_v"], cols["rho_c"],
                        rho_r, cols["T"], const=const)
    return HydrostaticProfile(
        z=z, p=cols["p"], rho_d=cols["rho_d"], rho_v=cols["rho_v"],
        rho_c=cols["rho_c"], rho_r=rho_r, T=cols["T"], E=E,
        closure=closure, guess_values=cols["g"], const=const,
        target_fn=target_fn)


# ---------------------------------------------------------------------------
# closures
# ---------------------------------------------------------------------------

def _saturated_parts(T, p, const):
    """Saturation vapour and dry density at (T, p); NaN where p <= e_s."""
    es = saturation_vapour_pressure(T, const=const)
    rho_vs = es / (const.R_v * T)
    p_d = p - es
    rho_d = np.where(p_d > 0.0, p_d, np.nan) / (const.R_d * T)
    return rho_d, rho_vs


def _theta_e_closure(theta_e_fn, q_w, const):
    """Closure for saturated columns defined by a theta_e(z) profile.

    ``q_w`` fixes the liquid heat-capacity loading of theta_e; ``None``
    selects the cloud-free form where the saturation mixing ratio takes
    its place, and the cloud density is identically zero.
    """

    def closure(z, p, guess):
        target = np.broadcast_to(np.asarray(theta_e_fn(z), dtype=float),
                                 p.shape)

        def resid(T):
            rho_d, rho_vs = _saturated_parts(T, p, const)
            q = q_w if q_w is not None else rho_vs / rho_d
            return wet_equivalent_potential_temperature(
                rho_d, rho_vs, T, q, const=const) - target

        T = _vec_newton(resid, guess, *T_WINDOW, scale=target,
                        context="theta_e column")
        rho_d, rho_vs = _saturated_parts(T, p, const)
        if q_w is None:
            rho_c = np.zeros_like(rho_vs)
        else:
            rho_c = q_w * rho_d - rho_vs
        return rho_d, rho_vs, rho_c, T, T

    return closure


def _temperature_closure(T_fn, const):
    """Explicit closure for a prescribed temperature profile at saturation."""

    def closure(z, p, guess):
        T = np.broadcast_to(np.asarray(T_fn(z), dtype=float), p.shape).copy()
        rho_d, rho_vs = _saturated_parts(T, p, const)
        if np.any(~np.isfinite(rho_d)):
            raise ProfileError("saturation pressure exceeds total pressure "
                               "along the temperature profile")
        return rho_d, rho_vs, np.zeros_like(T), T, T

    return closure


def relative_humidity(rho_d, rho_v, T, const: ThermoConstants = DEFAULT_CONSTANTS):
    """Relative humidity (q_v/q_vs) (1 + q_vs/eps) / (1 + q_v/eps).

    Mixing ratios are formed from the partial densities, with the
    saturation vapour density e_s(T)/(R_v T).
    """
    rho_vs = saturation_vapour_density(T, const)
    q_v = np.asarray(rho_v, dtype=float) / rho_d
    q_vs = rho_vs / rho_d
    out = (q_v / q_vs) * (1.0 + q_vs / const.epsilon) \
        / (1.0 + q_v / const.epsilon)
    return out if np.ndim(out) else float(out)


def saturation_vapour_density(T, const: ThermoConstants = DEFAULT_CONSTANTS):
    es = saturation_vapour_pressure(T, const=const)
    return es / (const.R_v * np.asarray(T, dtype=float))


def _humidity_residual(rho_v, rho_vs, p, T, target, const):
    """Relative-humidity mismatch for unknown vapour density at fixed (p, T)."""
    rho_d = (p - rho_v * const.R_v * T) / (const.R_d * T)
    q_v = rho_v / rho_d
    q_vs = rho_vs / rho_d
    return (q_v / q_vs) * (1.0 + q_vs / const.epsilon) \
        / (1.0 + q_v / const.epsilon) - target


def _humidity_theta_d_closure(theta_d_fn, humidity, const):
    """Closure for a column from relative humidity + dry potential temperature.

    The temperature follows explicitly from theta_d and the pressure; the
    vapour density solves the relative-humidity equation on [0, rho_vs].
    """

    def closure(z, p, guess):
        theta = np.broadcast_to(np.asarray(theta_d_fn(z), dtype=float),
                                p.shape)
        T = theta * np.power(p / const.p_ref, const.R_d / const.c_pd)
        rho_vs = saturation_vapour_density(T, const)

        def resid(rv):
            return _humidity_residual(rv, rho_vs, p, T, humidity, const)

        rho_v = _vec_newton(resid, np.clip(guess, 0.0, rho_vs),
                            0.0, float(np.max(rho_vs)),
                            scale=humidity, context="humidity column")
        rho_d = (p - rho_v * const.R_v * T) / (const.R_d * T)
        return rho_d, rho_v, np.zeros_like(T), T, rho_v

    return closure


# ---------------------------------------------------------------------------
# base-state constructors
# ---------------------------------------------------------------------------

def hydrostatic_saturated_qw(theta_e_profile, q_w, p_surface, z_top,
                             dz=DZ_PROFILE,
                             const: ThermoConstants = DEFAULT_CONSTANTS):
    """Saturated column with constant total water fraction q_w.

    Integrates dp/dz = -(1 + q_w) rho_d g; at each node the state law,
    the saturation vapour pressure and the theta_e definition determine
    (rho_d, rho_vs, T).  The cloud density is q_w rho_d - rho_vs and the
    rain density is zero.

    Parameters
    ----------
    theta_e_profile : callable
        Height profile of the wet equivalent potential temperature [K].
    q_w : float
        Total water fraction (must exceed the saturation ratio so clouds
        exist along the column).
    p_surface : float
        Pressure at z = 0 [Pa]; reproduced exactly in the table.

    Returns
    -------
    HydrostaticProfile
    """
    if not q_w > 0.0 or not p_surface > 0.0:
        raise ConfigurationError("q_w and p_surface must be positive")
    z = _profile_grid(z_top, dz)
    closure = _theta_e_closure(theta_e_profile, q_w, const)
    cols = _integrate_column(
        z, p_surface, closure,
        weight=lambda rd, rv, rc: (1.0 + q_w) * rd,
        guess0=min(max(float(theta_e_profile(0.0)), 200.0), 350.0),
        g=const.g)
    if np.any(cols["rho_c"] < -1e-12):
        j = int(np.argmin(cols["rho_c"]))
        raise ProfileError(
            f"q_w = {q_w} is below saturation at z = {z[j]:.1f} m "
            f"(cloud density {cols['rho_c'][j]:.3e})")
    return _finish_profile(z, cols, closure, const, theta_e_profile)


def hydrostatic_no_cloud(theta_e_profile, p_surface, z_top, dz=DZ_PROFILE,
                         const: ThermoConstants = DEFAULT_CONSTANTS):
    """Saturated cloud-free column defined by a theta_e(z) profile.

    As :func:`hydrostatic_saturated_qw` but with hydrostatic weight
    (rho_d + rho_vs) g, the saturation mixing ratio replacing q_w inside
    theta_e, and zero cloud density.
    """
    if not p_surface > 0.0:
        raise ConfigurationError("p_surface must be positive")
    z = _profile_grid(z_top, dz)
    closure = _theta_e_closure(theta_e_profile, None, const)
    cols = _integrate_column(
        z, p_surface, closure,
        weight=lambda rd, rv, rc: rd + rv,
        guess0=min(max(float(theta_e_profile(0.0)), 200.0), 350.0),
        g=const.g)
    return _finish_profile(z, cols, closure, const, theta_e_profile)


def hydrostatic_temperature_profile(T_sl, T_str, H_scal, p_surface, z_top,
                                    dz=DZ_PROFILE,
                                    const: ThermoConstants = DEFAULT_CONSTANTS):
    """Column from the exponential temperature profile, saturated, no clouds.

    T(z) = T_str + (T_sl - T_str) exp(-z / H_scal); the vapour density is
    the saturation density e_s(T)/(R_v T) and the dry density follows from
    the state law.
    """
    if not (T_sl > T_str > 0.0):
        raise ConfigurationError("need T_sl > T_str > 0")
    if not H_scal > 0.0 or not p_surface > 0.0:
        raise ConfigurationError("H_scal and p_surface must be positive")

    def T_fn(z):
        return T_str + (T_sl - T_str) * np.exp(-np.asarray(z, float) / H_scal)

    z = _profile_grid(z_top, dz)
    closure = _temperature_closure(T_fn, const)
    cols = _integrate_column(
        z, p_surface, closure,
        weight=lambda rd, rv, rc: rd + rv,
        guess0=T_sl, g=const.g)
    return _finish_profile(z, cols, closure, const, T_fn)


def hydrostatic_humidity_theta_d(theta_d_profile, humidity, p_surface, z_top,
                                 dz=DZ_PROFILE,
                                 const: ThermoConstants = DEFAULT_CONSTANTS):
    """Column from constant relative humidity and a dry-theta profile."""
    if not (0.0 < humidity < 1.0):
        raise ConfigurationError("relative humidity must lie in (0, 1)")
    if not p_surface > 0.0:
        raise ConfigurationError("p_surface must be positive")
    z = _profile_grid(z_top, dz)
    closure = _humidity_theta_d_closure(theta_d_profile, humidity, const)
    T0 = float(theta_d_profile(0.0)) \
        * (p_surface / const.p_ref) ** (const.R_d / const.c_pd)
    guess0 = humidity * float(saturation_vapour_density(T0, const))
    cols = _integrate_column(
        z, p_surface, closure,
        weight=lambda rd, rv, rc: rd + rv,
        guess0=guess0, g=const.g)
    return _finish_profile(z, cols, closure, const, theta_d_profile)


# ---------------------------------------------------------------------------
# pointwise perturbation constructors
# ---------------------------------------------------------------------------

def gravity_wave_perturbation(profile, theta_e_pert, q_w=None,
                              velocity=(20.0, 0.0), rho_m_mode="qw",
                              const: ThermoConstants = DEFAULT_CONSTANTS):
    """Initial condition from a theta_e perturbation at fixed pressure.

    At each point the perturbed (rho_d, rho_vs, T) solve the same algebraic
    block as the base column with theta_e replaced by
    ``theta_e_base(z) + theta_e_pert(x, z)`` and pressure pinned to the
    hydrostatic value.  With ``q_w`` given (cloudy column) the moist
    perturbation follows the total-water bookkeeping rho_m' = q_w rho_d'
    by default; ``rho_m_mode="printed"`` selects the variant
    rho_m' = rho_d' - rho_v' instead.  With ``q_w=None`` the cloud-free
    saturated form is used and rho_m' = rho_vs - rho_vs_base.

    Returns a vectorised callback ``(x, z) -> (6, n)`` of conserved
    perturbation components; the momentum carries the full density times
    the prescribed velocity.
    """
    if rho_m_mode not in ("qw", "printed"):
        raise ConfigurationError(f"unknown rho_m_mode '{rho_m_mode}'")
    if profile.target_fn is None:
        raise ConfigurationError("profile lacks a theta_e target function")
    ux, uz = float(velocity[0]), float(velocity[1])

    def ic(x, z):
        x = np.asarray(x, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        base = profile.evaluate(z)
        target = np.asarray(profile.target_fn(z), dtype=float) \
            + np.asarray(theta_e_pert(x, z), dtype=float)

        def resid(T):
            rho_dd, rho_vs = _saturated_parts(T, base.p, const)
            q = q_w if q_w is not None else rho_vs / rho_dd
            return wet_equivalent_potential_temperature(
                rho_dd, rho_vs, T, q, const=const) - target

        T = _vec_newton(resid, base.T, *T_WINDOW, scale=target,
                        context="theta_e perturbation")
        rho_d, rho_vs = _saturated_parts(T, base.p, const)
        d_rho_d = rho_d - base.rho_d
        if q_w is None:
            rho_m = rho_vs
            d_rho_m = rho_vs - base.rho_v
            rho_c = np.zeros_like(T)
        elif rho_m_mode == "qw":
            d_rho_m = q_w * d_rho_d
            rho_m = base.rho_m + d_rho_m
            rho_c = rho_m - rho_vs
        else:
            d_rho_m = d_rho_d - (rho_vs - base.rho_v)
            rho_m = base.rho_m + d_rho_m
            rho_c = rho_m - rho_vs
        rho = rho_d + rho_m
        E = internal_energy(rho_d, rho_vs, rho_c, np.zeros_like(T), T,
                            const=const) + 0.5 * rho * (ux * ux + uz * uz)
        return np.stack([d_rho_d, d_rho_m, np.zeros_like(T),
                         rho * ux, rho * uz, E - base.E])

    return ic


def bryan_fritsch_state(profile, x_c=10e3, z_c=2e3, x_r=2e3, z_r=2e3,
                        amplitude=2.0,
                        const: ThermoConstants = DEFAULT_CONSTANTS):
    """Warm-bubble initial condition matched through the buoyancy.

    The density potential temperature of the base column is raised by the
    fraction theta'/300 inside an elliptical bubble, where
    theta' = amplitude cos^2(pi L / 2) and L is the clipped scaled radius.
    The temperature solves the buoyancy equation at fixed hydrostatic
    pressure and unchanged dry/moist densities; vapour and cloud are then
    re-split on the saturation curve.  Returns a callback as in
    :func:`gravity_wave_perturbation`; only E' is nonzero.
    """

    def ic(x, z):
        x = np.asarray(x, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        base = profile.evaluate(z)
        L = np.minimum(np.hypot((x - x_c) / x_r, (z - z_c) / z_r), 1.0)
        theta_p = amplitude * np.cos(0.5 * np.pi * L) ** 2
        theta_rho_base = density_potential_temperature(
            base.p, base.T, base.rho_v / base.rho_d, const=const)
        target = theta_rho_base * (1.0 + theta_p / 300.0)

        def resid(T):
            rho_dd, rho_vs = _saturated_parts(T, base.p, const)
            return density_potential_temperature(
                base.p, T, rho_vs / rho_dd, const=const) - target

        T = _vec_newton(resid, base.T, *T_WINDOW, scale=target,
                        context="buoyancy bubble")
        rho_v = saturation_vapour_density(T, const)
        rho_c = base.rho_m - rho_v
        E = internal_energy(base.rho_d, rho_v, rho_c, np.zeros_like(T), T,
                            const=const)
        zero = np.zeros_like(T)
        return np.stack([zero, zero, zero, zero, zero, E - base.E])

    return ic


def humidity_bubble(r, humidity_bg, r1, r2):
    """Piecewise-cos^2 relative-humidity bubble profile.

    Saturated (1) inside radius r2, background outside r1, blended in
    between by the continuous half-cosine
    H = H_bg + (1 - H_bg) cos^2(pi (r - r2) / (2 (r1 - r2))).
    """
    r = np.asarray(r, dtype=float)
    blend = humidity_bg + (1.0 - humidity_bg) \
        * np.cos(0.5 * np.pi * np.clip((r - r2) / (r1 - r2), 0.0, 1.0)) ** 2
    return np.where(r < r2, 1.0, np.where(r >= r1, humidity_bg, blend))


def rain_thermal_perturbation(profile, humidity_bg, center, r1, r2,
                              const: ThermoConstants = DEFAULT_CONSTANTS):
    """Initial condition from a relative-humidity bubble at fixed (p, theta_d).

    Temperature and pressure keep their base values; inside the bubble the
    vapour density solves the relative-humidity equation for the bubble
    profile and the dry density rebalances through the state law.  No
    clouds, no rain, zero velocity.
    """
    if not r1 > r2 > 0.0:
        raise ConfigurationError("need bubble radii r1 > r2 > 0")
    cx, cz = float(center[0]), float(center[1])

    def ic(x, z):
        x = np.asarray(x, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        base = profile.evaluate(z)
        T = base.T
        rho_vs = saturation_vapour_density(T, const)
        target = humidity_bubble(np.hypot(x - cx, z - cz),
                                 humidity_bg, r1, r2)

        def resid(rv):
            return _humidity_residual(rv, rho_vs, base.p, T, target, const)

        guess = base.rho_v + (rho_vs - base.rho_v) \
            * (target - humidity_bg) / (1.0 - humidity_bg)
        rho_v = _vec_newton(resid, guess, 0.0, float(np.max(rho_vs)),
                            scale=np.maximum(target, humidity_bg),
                            context="humidity bubble")
        rho_d = (base.p - rho_v * const.R_v * T) / (const.R_d * T)
        zero = np.zeros_like(T)
        E = internal_energy(rho_d, rho_v, zero, zero, T, const=const)
        return np.stack([rho_d - base.rho_d, rho_v - base.rho_v, zero,
                         zero, zero, E - base.E])

    return ic


def rain_thermal_state(T_surf=283.0, p_surface=8.5e4, stratification=1.3e-5,
                       humidity=0.2, z_top=2400.0, center=(1800.0, 800.0),
                       r1=300.0, r2=200.0, dz=DZ_PROFILE,
                       const: ThermoConstants = DEFAULT_CONSTANTS):
    """Base column and humidity-bubble initial condition for the rain thermal.

    The dry potential temperature profile is Theta exp(S z) with Theta
    matching ``T_surf`` at the surface pressure; the relative humidity is
    constant along the column.  Returns ``(profile, ic)`` where ``ic`` is
    the pointwise conserved-perturbation callback.
    """
    theta0 = T_surf * (const.p_ref / p_surface) ** (const.R_d / const.c_pd)

    def theta_d_fn(z):
        return theta0 * np.exp(stratification * np.asarray(z, dtype=float))

    profile = hydrostatic_humidity_theta_d(theta_d_fn, humidity, p_surface,
                                           z_top, dz=dz, const=const)
    ic = rain_thermal_perturbation(profile, humidity, center, r1, r2,
                                   const=const)
    return profile, ic
