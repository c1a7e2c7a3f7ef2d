"""The assembled moist-flow operator: du/dt for the perturbation system.

Couples the physics callbacks of :mod:`model` into the generic assembly,
holding per-point-group base-state tables and recovery warm-start caches.
The right-hand side also captures, per call,

 - the per-element maximum wave speed (for dt advice),
 - the quadrature-weighted rain flux through the bottom wall, accumulated
   with the Runge-Kutta stage weight into a per-column fallout profile
   (the exact discrete rain mass that left the domain).

Backends: ``compiled`` uses the Cython kernels (default when importable),
``fallback`` the pure-numpy assembly; ``MOISTDG_BACKEND`` overrides.
"""

import os
from types import SimpleNamespace

import numpy as np

from . import assembly, model
from .assembly import Discretization
from .errors import ConfigurationError
from .microphysics import DEFAULT_PARAMS, MicrophysicsParams
from .model import NCOMP, BaseStateArrays
from .thermo import DEFAULT_CONSTANTS, ThermoConstants

__all__ = ["MoistOperator", "select_backend", "symmetrize_x",
           "project_pointwise"]

# sign of each component under the x-mirror map (m_x flips)
MIRROR_SIGNS = np.array([1.0, 1.0, 1.0, -1.0, 1.0, 1.0])


def select_backend(requested: str = "auto") -> str:
    """Resolve the backend name, honouring MOISTDG_BACKEND."""
    requested = os.environ.get("MOISTDG_BACKEND", requested)
    if requested not in ("auto", "compiled", "fallback"):
        raise ConfigurationError(f"unknown backend {requested!r}")
    if requested == "fallback":
        return "fallback"
    try:
        from . import _kernels  # noqa: F401
        have = getattr(_kernels, "KERNELS_AVAILABLE", False)
    except ImportError:
        have = False
    if requested == "compiled" and not have:
        raise ConfigurationError("compiled kernels requested but unavailable")
    return "compiled" if have else "fallback"


def _tile_base(level_vals, mesh, nq):
    """Expand per-(level, qz) base values to the flat volume ordering."""
    # volume ordering p = (e*nq + qx)*nq + qz with e = j*nx + i
    per_elem = np.repeat(level_vals, mesh.nx, axis=0)       # (E, nqz)
    return np.broadcast_to(per_elem[:, None, :],
                           (mesh.n_elements, nq, nq)).reshape(-1)


class MoistOperator:
    """Semi-discrete operator L(U) = M^{-1}(-r(U)) for the moist system."""

    def __init__(self, disc: Discretization, base_fn,
                 params: MicrophysicsParams = DEFAULT_PARAMS,
                 const: ThermoConstants = DEFAULT_CONSTANTS,
                 microphysics_enabled: bool = True,
                 viscosity_gamma: float = 0.0,
                 sip_sigma: float = 4.0,
                 sip_penalty_mode: str = "k2_over_h",
                 backend: str = "auto"):
        if disc.ncomp != NCOMP:
            raise ConfigurationError(f"operator needs {NCOMP} components")
        self.disc = disc
        self.params = params
        self.const = const
        self.microphysics_enabled = microphysics_enabled
        self.viscosity_gamma = viscosity_gamma
        self.sip_sigma = sip_sigma
        self.sip_penalty_mode = sip_penalty_mode
        self.backend = select_backend(backend)
        self._build_base_tables(base_fn)
        self._init_caches()
        m = disc.mesh
        self.fallout_profile = np.zeros(m.nx)   # time-integrated, per column
        self.lambda_K = np.zeros(m.n_elements)  # refreshed every rhs call
        self._kernel_ctx = None
        if self.backend == "compiled":
            from . import _kernels
            self._kernels = _kernels

    # ------------------------------------------------------------------
    # base-state tables

    def _build_base_tables(self, base_fn):
        """Evaluate the hydrostatic profile at every point group."""
        disc = self.disc
        m = disc.mesh
        nq = disc.nq
        # per-level z-quadrature values, shape (nz, nq)
        self.base_level = base_fn(disc.zq.reshape(-1))
        lv = {f: getattr(self.base_level, f).reshape(m.nz, nq)
              for f in ("rho_d", "rho_m", "rho_r", "p", "E", "T")}
        # horizontal facet rows sit at the level interfaces
        z_faces = m.z_extent[0] + m.hz * np.arange(m.nz + 1)
        z_faces[-1] = m.z_extent[1]
        self.base_faces = base_fn(z_faces)

        # volume group (flat ordering)
        self.base_vol = BaseStateArrays(
            **{f: _tile_base(lv[f], m, nq) for f in lv})
        # vertical interior facets: one facet per (j, i'), trace along z
        nvert_per_row = m.nx if m.periodic_x else m.nx - 1
        self.base_vx = BaseStateArrays(
            **{f: np.repeat(lv[f], nvert_per_row, axis=0).reshape(-1)
               for f in lv})
        # horizontal interior facets: constant along the facet
        fb = {f: getattr(self.base_faces, f) for f in
              ("rho_d", "rho_m", "rho_r", "p", "E", "T")}
        self.base_hz = BaseStateArrays(
            **{f: np.repeat(np.repeat(fb[f][1:m.nz], m.nx), nq) for f in fb})
        self.base_bt = {
            "bottom": BaseStateArrays(
                **{f: np.full(m.nx * nq, fb[f][0]) for f in fb}),
            "top": BaseStateArrays(
                **{f: np.full(m.nx * nq, fb[f][m.nz]) for f in fb}),
        }
        if not m.periodic_x:
            for tag in ("left", "right"):
                self.base_bt[tag] = BaseStateArrays(
                    **{f: np.repeat(lv[f], 1, axis=0).reshape(-1) for f in lv})

    def _init_caches(self):
        """Warm-start temperature caches per point group and side."""
        disc = self.disc
        m = disc.mesh
        nq = disc.nq
        self.cache = {
            "vol": self.base_vol.T.copy(),
            "vx-": self.base_vx.T.copy(),
            "vx+": self.base_vx.T.copy(),
            "hz-": self.base_hz.T.copy(),
            "hz+": self.base_hz.T.copy(),
        }
        for tag in self.base_bt:
            self.cache[tag + "-"] = self.base_bt[tag].T.copy()
            self.cache[tag + "+"] = self.base_bt[tag].T.copy()

    def reset_caches(self):
        self._init_caches()
        self._kernel_ctx = None     # context views now point at dead arrays

    # ------------------------------------------------------------------
    # physics callbacks

    def _recover(self, u_flat, base, cache_key):
        S = model.recover_secondary(u_flat, base,
                                    T_guess=self.cache[cache_key],
                                    params=self.params, const=self.const)
        self.cache[cache_key] = S.T
        return S

    def _facet_base(self, group):
        if group == "vx":
            return self.base_vx
        if group == "hz":
            return self.base_hz
        return self.base_bt[group]

    # ------------------------------------------------------------------
    # the right-hand side

    def rhs(self, coef, weight: float = 0.0):
        """du/dt; ``weight`` [s] scales the fallout accumulation."""
        if self.backend == "compiled":
            return self._rhs_compiled(coef, weight)
        return self._rhs_fallback(coef, weight)

    def _rhs_fallback(self, coef, weight):
        disc = self.disc
        m = disc.mesh
        stash = {}

        def flux_fn(u_flat):
            S = self._recover(u_flat, self.base_vol, "vol")
            stash["S_vol"] = S
            return model.physical_flux(u_flat, S, self.base_vol, self.const)

        def source_fn(u_flat):
            S = stash["S_vol"]
            return model.source_vector(
                u_flat, S, self.base_vol, self.params, self.const,
                microphysics_enabled=self.microphysics_enabled)

        def num_flux(um, up, normal, group):
            base = self._facet_base(group)
            key = {"vx": "vx", "hz": "hz"}.get(group, group)
            Sm = self._recover(um, base, key + "-")
            Sp = self._recover(up, base, key + "+")
            return model.lax_friedrichs_flux(um, up, Sm, Sp, base,
                                             normal[0], normal[1], self.const)

        def bc_state(um, normal, tag):
            return model.boundary_state(um, normal[0], normal[1])

        fallout = {}
        r = assembly.volume_residual(disc, coef, flux_fn, source_fn)
        r += assembly.facet_residual(disc, coef, num_flux, bc_state,
                                     fallout=fallout)
        S = stash["S_vol"]
        self._capture_wavespeed(S)
        if self.viscosity_gamma > 0.0:
            r += self._sip_term(coef, S)
        if weight != 0.0 and "bottom" in fallout:
            # per-facet integral -> per-column profile, stage-weighted
            per_facet = fallout["bottom"].reshape(m.nx)
            self.fallout_profile += weight * per_facet
        return -assembly.apply_inverse_mass(disc, r)

    def _sip_term(self, coef, S_vol):
        disc = self.disc
        m = disc.mesh
        nq = disc.nq
        shape = (m.n_elements, nq, nq)
        ux = S_vol.ux.reshape(shape)
        uz = S_vol.uz.reshape(shape)
        vr = S_vol.v_r.reshape(shape)
        vsq_bulk = ux * ux + uz * uz
        wz = uz - vr
        vsq_rain = ux * ux + wz * wz
        a_bulk, a_rain = assembly.artificial_viscosity_coefficient(
            disc, vsq_bulk, vsq_rain, self.viscosity_gamma)
        alpha_per_comp = [a_bulk, a_bulk, a_rain, a_bulk, a_bulk, a_bulk]
        return assembly.sip_residual(disc, coef, alpha_per_comp,
                                     self.sip_sigma, self.sip_penalty_mode)

    def _capture_wavespeed(self, S_vol):
        disc = self.disc
        nq2 = disc.nq * disc.nq
        speed = (np.hypot(S_vol.ux, S_vol.uz) + S_vol.c_m
                 + np.abs(S_vol.v_r))
        self.lambda_K = speed.reshape(-1, nq2).max(axis=1)

    def _build_kernel_ctx(self):
        disc = self.disc
        m = disc.mesh
        t = disc.tables
        k1 = disc.k + 1
        if k1 > 8 or disc.nq > 9:
            raise ConfigurationError(
                "compiled backend supports k+1 <= 8 and nq <= 9; "
                "use backend='fallback' for higher orders")
        const, par = self.const, self.params
        w1 = t.rule.weights_1d

        def pack(bs):
            return np.ascontiguousarray(np.stack(
                [bs.rho_d, bs.rho_m, bs.rho_r, bs.p, bs.E, bs.T]))

        empty = np.zeros((NCOMP, 0))
        bases = {"vol": pack(self.base_vol), "vx": pack(self.base_vx),
                 "hz": pack(self.base_hz),
                 "bottom": pack(self.base_bt["bottom"]),
                 "top": pack(self.base_bt["top"]),
                 "left": (pack(self.base_bt["left"])
                          if "left" in self.base_bt else empty),
                 "right": (pack(self.base_bt["right"])
                           if "right" in self.base_bt else empty)}
        npts = m.n_elements * disc.nq * disc.nq
        self._vol_ux = np.zeros(npts)
        self._vol_uz = np.zeros(npts)
        self._vol_vr = np.zeros(npts)
        # L(U) results rotate between two buffers: each SSPRK stage
        # consumes its rhs before the next call, so two suffice.  Copy the
        # returned array if it must outlive the next-but-one rhs call.
        self._out_bufs = (np.zeros(disc.shape), np.zeros(disc.shape))
        self._out_toggle = 0
        self._kernel_ctx = self._kernels.make_context(
            nx=m.nx, nz=m.nz, k1=k1, nq=disc.nq, periodic=m.periodic_x,
            hx=m.hx, hz=m.hz, J=m.jacobian,
            B=t.B, D=t.D,
            wB=np.ascontiguousarray(t.B * w1[None, :]),
            wD=np.ascontiguousarray(t.D * w1[None, :]),
            w1=w1, Bl=t.Bl, Br=t.Br,
            bases=bases, caches=self.cache,
            lambda_K=self.lambda_K, fallout=self.fallout_profile,
            ux_vol=self._vol_ux, uz_vol=self._vol_uz, vr_vol=self._vol_vr,
            c_vd=const.c_vd, c_vv=const.c_vv, c_l=const.c_l,
            R_d=const.R_d, R_v=const.R_v, L_star=const.L_star,
            T_ref=const.T_ref, e_ref=const.e_ref,
            es_a=const.es_exponent_a, es_b=const.es_coefficient_b,
            g=const.g,
            newton_tol=par.newton_tol, newton_max_iter=par.newton_max_iter,
            q_au=par.q_au, vr_pref=par.vr_prefactor,
            rho_w_liquid=(par.rho_w_mode == "liquid_constant"),
            micro_on=self.microphysics_enabled)

    def _rhs_compiled(self, coef, weight):
        if self._kernel_ctx is None:
            self._build_kernel_ctx()
        disc = self.disc
        coef = np.ascontiguousarray(
            np.asarray(coef, dtype=float).reshape(disc.shape))
        out = self._out_bufs[self._out_toggle]
        self._out_toggle = 1 - self._out_toggle
        self._kernels.rhs(self._kernel_ctx, coef, float(weight), out)
        if self.viscosity_gamma > 0.0:
            S = SimpleNamespace(ux=self._vol_ux, uz=self._vol_uz,
                                v_r=self._vol_vr)
            out -= assembly.apply_inverse_mass(disc, self._sip_term(coef, S))
        return out

    # ------------------------------------------------------------------
    def estimate_dt(self, coef, cfl: float) -> float:
        from .timestep import estimate_dt
        self.rhs(coef, 0.0)
        return estimate_dt(self.disc.mesh, self.disc.k, cfl, self.lambda_K)

    def total_fallout(self) -> float:
        """Accumulated rain mass that left through the bottom [kg/m]."""
        return float(self.fallout_profile.sum())


def project_pointwise(disc: Discretization, fn):
    """L2-project a pointwise field ``(x, z) -> (ncomp, n)`` onto the basis."""
    x, z = disc.volume_points()
    U = np.asarray(fn(x.ravel(), z.ravel()))
    vals = U.reshape(disc.ncomp, disc.mesh.n_elements, disc.nq, disc.nq)
    return assembly.l2_project(disc, vals.transpose(1, 0, 2, 3))


def symmetrize_x(disc: Discretization, coef):
    """Project coefficients onto their x-mirror-symmetric part.

    The mirror map about the domain midline sends element column i to
    nx-1-i, flips the sign of odd-in-x modes, and negates the horizontal
    momentum component.  For initial data that is symmetric by
    construction this removes the rounding-level asymmetry of projection,
    after which a mirror-equivariant operator keeps the field symmetric
    bitwise.
    """
    m = disc.mesh
    k1 = disc.k + 1
    c = np.asarray(coef).reshape(m.nz, m.nx, disc.ncomp, k1, k1)
    mode_sign = np.array([(-1.0) ** a for a in range(k1)])
    sign = MIRROR_SIGNS[:disc.ncomp, None, None] * mode_sign[None, :, None]
    mirrored = c[:, ::-1] * sign
    out = 0.5 * (c + mirrored)
    # make the pairing exact: copy the mirrored left half onto the right
    half = m.nx // 2
    if half:
        out[:, m.nx - half:] = (out[:, :half] * sign)[:, ::-1]
    return out.reshape(m.n_elements, disc.ncomp, disc.nmodes)
