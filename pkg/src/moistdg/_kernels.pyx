# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Fused Cython assembly kernels for the moist-flow operator.

One pass per point group (volume, vertical facets, horizontal facets,
walls) evaluates traces, runs the pointwise condensation recovery with
the shared warm-start caches, forms fluxes/sources and contracts them
against the basis tables, writing into per-element slot buffers that a
final combine turns into L(U).  The per-point math mirrors the numpy
reference in :mod:`model`, :mod:`microphysics` and :mod:`thermo` formula
by formula (same operand order), so both backends agree to rounding.

Reductions over the x-direction quadrature index are accumulated in
mirror-image pairs, and each element's slot contributions are combined
with a fixed two-operand tree.  Together with the exactly signed parity
of the basis tables this makes the assembled right-hand side commute
bitwise with the x-mirror map, so a mirror-symmetric state stays
symmetric to the last bit under time stepping.  That property (and plain
reproducibility) requires IEEE semantics: do not compile with
value-changing fast-math flags (see setup.py).

Capacity limits: k+1 <= 8 modes and nq <= 9 quadrature points per
direction (stack buffers); the operator falls back to numpy above that.
"""

import numpy as np

from libc.math cimport exp, fabs, hypot, log, pow, sqrt

from .errors import DomainError, RecoveryError

KERNELS_AVAILABLE = True

cdef enum:
    NC = 6          # components: rho_d', rho_m', rho_r', m_x, m_z, E'
    KM = 8          # stack capacity: 1D modes (k+1)
    QM = 9          # stack capacity: 1D quadrature points

cdef enum:          # recovery failure codes
    ERR_NONE = 0
    ERR_RHO_D = 1
    ERR_CONV = 2
    ERR_WINDOW = 3

cdef double T_LO = 150.0
cdef double T_HI = 400.0


cdef struct Sec:
    # recovered secondary state at one point (totals, not perturbations)
    double rd, rm, rr, rho
    double ux, uz
    double rho_v, rho_c, T
    double p_pert, v_r, c_m


cdef class KernelContext:
    """Tables, base states, caches and shared output arrays.

    Arrays are referenced, never copied: the warm-start temperature
    caches, the fallout profile and the per-element wave speeds are the
    operator's own arrays, so restarts and diagnostics see every update
    the kernels make.
    """

    # physics scalars
    cdef double c_vd, c_vv, c_l, R_d, R_v, L_star, T_ref, e_ref, es_a, es_b, g
    cdef double newton_tol, q_au, vr_pref
    cdef int newton_max_iter
    cdef bint rho_w_liquid, micro_on
    # mesh and basis
    cdef int nx, nz, k1, nq, nE, nvf
    cdef bint periodic
    cdef double hx, hz, J
    cdef double[:, ::1] B, D, wB, wD
    cdef double[::1] w1, Bl, Br
    # base-state tables, rows (rho_d, rho_m, rho_r, p, E, T) per point
    cdef double[:, ::1] b_vol, b_vx, b_hz, b_bot, b_top, b_lft, b_rgt
    # warm-start temperature caches per group and side
    cdef double[::1] T_vol, T_vxm, T_vxp, T_hzm, T_hzp
    cdef double[::1] T_botm, T_botp, T_topm, T_topp
    cdef double[::1] T_lftm, T_lftp, T_rgtm, T_rgtp
    # shared outputs
    cdef double[::1] lambda_K, fallout
    cdef double[::1] ux_vol, uz_vol, vr_vol
    # per-element slot buffers (E, NC, nmodes)
    cdef double[:, :, ::1] r_vol, r_L, r_R, r_B, r_T
    # error report from the last pass
    cdef int err_code
    cdef double err_val

    def __init__(self, *, int nx, int nz, int k1, int nq, bint periodic,
                 double hx, double hz, double J,
                 B, D, wB, wD, w1, Bl, Br, bases, caches,
                 lambda_K, fallout, ux_vol, uz_vol, vr_vol,
                 double c_vd, double c_vv, double c_l, double R_d,
                 double R_v, double L_star, double T_ref, double e_ref,
                 double es_a, double es_b, double g,
                 double newton_tol, int newton_max_iter, double q_au,
                 double vr_pref, bint rho_w_liquid, bint micro_on):
        if k1 > KM or nq > QM:
            raise ValueError("kernel capacity exceeded: need k+1 <= 8, nq <= 9")
        self.nx = nx
        self.nz = nz
        self.k1 = k1
        self.nq = nq
        self.periodic = periodic
        self.nE = nx * nz
        self.nvf = nx if periodic else nx - 1
        self.hx = hx
        self.hz = hz
        self.J = J
        self.B = B
        self.D = D
        self.wB = wB
        self.wD = wD
        self.w1 = w1
        self.Bl = Bl
        self.Br = Br
        self.b_vol = bases["vol"]
        self.b_vx = bases["vx"]
        self.b_hz = bases["hz"]
        self.b_bot = bases["bottom"]
        self.b_top = bases["top"]
        self.b_lft = bases["left"]
        self.b_rgt = bases["right"]
        self.T_vol = caches["vol"]
        self.T_vxm = caches["vx-"]
        self.T_vxp = caches["vx+"]
        self.T_hzm = caches["hz-"]
        self.T_hzp = caches["hz+"]
        self.T_botm = caches["bottom-"]
        self.T_botp = caches["bottom+"]
        self.T_topm = caches["top-"]
        self.T_topp = caches["top+"]
        empty = np.zeros(0)
        self.T_lftm = caches.get("left-", empty)
        self.T_lftp = caches.get("left+", empty)
        self.T_rgtm = caches.get("right-", empty)
        self.T_rgtp = caches.get("right+", empty)
        self.lambda_K = lambda_K
        self.fallout = fallout
        self.ux_vol = ux_vol
        self.uz_vol = uz_vol
        self.vr_vol = vr_vol
        nmodes = k1 * k1
        self.r_vol = np.zeros((self.nE, NC, nmodes))
        self.r_L = np.zeros((self.nE, NC, nmodes))
        self.r_R = np.zeros((self.nE, NC, nmodes))
        self.r_B = np.zeros((self.nE, NC, nmodes))
        self.r_T = np.zeros((self.nE, NC, nmodes))
        self.c_vd = c_vd
        self.c_vv = c_vv
        self.c_l = c_l
        self.R_d = R_d
        self.R_v = R_v
        self.L_star = L_star
        self.T_ref = T_ref
        self.e_ref = e_ref
        self.es_a = es_a
        self.es_b = es_b
        self.g = g
        self.newton_tol = newton_tol
        self.newton_max_iter = newton_max_iter
        self.q_au = q_au
        self.vr_pref = vr_pref
        self.rho_w_liquid = rho_w_liquid
        self.micro_on = micro_on
        self.err_code = ERR_NONE
        self.err_val = 0.0


def make_context(**kwargs):
    """Build a :class:`KernelContext`; see the operator for the packing."""
    return KernelContext(**kwargs)


# ---------------------------------------------------------------------------
# pointwise physics (scalar replicas of the numpy reference)


cdef inline double _es(KernelContext c, double T) noexcept:
    # e_ref * exp(a log(T/T_ref) + b (1/T_ref - 1/T))
    return c.e_ref * exp(c.es_a * log(T / c.T_ref)
                         + c.es_b * (1.0 / c.T_ref - 1.0 / T))


cdef inline void _residual(KernelContext c, double T, double rd, double rm,
                           double rr, double rho_e,
                           double* res, double* dres) noexcept:
    # energy residual R(T) and derivative, saturation branch inside
    cdef double es = _es(c, T)
    cdef double rvs = es / (c.R_v * T)
    cdef double rho_v, rho_c, drho_v, heat_cap
    if rvs < rm:
        rho_v = rvs
        rho_c = rm - rvs
        drho_v = rvs * (c.es_a / T + c.es_b / (T * T) - 1.0 / T)
    else:
        rho_v = rm
        rho_c = 0.0
        drho_v = 0.0
    heat_cap = c.c_vd * rd + c.c_vv * rho_v + c.c_l * (rho_c + rr)
    res[0] = heat_cap * (T - c.T_ref) + rho_v * c.L_star - rho_e
    dres[0] = heat_cap + drho_v * ((c.c_vv - c.c_l) * (T - c.T_ref)
                                   + c.L_star)


cdef int _recover_point(KernelContext c, const double* du,
                        double brd, double brm, double brr,
                        double bp, double bE,
                        double* Tcache, Sec* s) noexcept:
    """Clamp totals, solve the condensation system, fill ``s``.

    Returns an error code instead of raising; the caller reports it.
    """
    cdef double rd = brd + du[0]
    cdef double rm = brm + du[1]
    cdef double rr = brr + du[2]
    cdef double rho, ux, uz, kinetic, rho_e, tol
    cdef double heat_cap_u, T_lin, Tc, rvs, T, lo, hi, res, dres, Tn
    cdef double p, rho_w, gm, rho_v, rho_c
    cdef bint unsat, converged
    cdef int it

    if rd < 0.0:
        rd = 0.0
    if rm < 0.0:
        rm = 0.0
    if rr < 0.0:
        rr = 0.0
    if not rd > 0.0:
        return ERR_RHO_D
    rho = rd + rm + rr
    ux = du[3] / rho
    uz = du[4] / rho
    kinetic = 0.5 * (du[3] * ux + du[4] * uz)
    rho_e = bE + du[5] - kinetic

    # unsaturated closed form: all moisture stays vapour
    heat_cap_u = c.c_vd * rd + c.c_vv * rm + c.c_l * rr
    # tolerance floor carries the heat_cap*T_ref scale of the residual terms
    # (same expression tree as the python path to keep the backends aligned)
    tol = c.newton_tol * (fabs(rho_e) + heat_cap_u * c.T_ref)
    T_lin = c.T_ref + (rho_e - rm * c.L_star) / heat_cap_u
    unsat = False
    if rm == 0.0:
        unsat = True
    elif T_lin > 0.0:
        Tc = T_lin if T_lin > 1e-3 else 1e-3
        rvs = _es(c, Tc) / (c.R_v * Tc)
        if rvs >= rm:
            unsat = True

    if unsat:
        T = T_lin
    else:
        # bracketed damped Newton on the monotone residual, warm-started
        T = Tcache[0]
        if T < T_LO:
            T = T_LO
        elif T > T_HI:
            T = T_HI
        lo = T_LO
        hi = T_HI
        res = 0.0
        dres = 1.0
        converged = False
        for it in range(c.newton_max_iter + 200):
            _residual(c, T, rd, rm, rr, rho_e, &res, &dres)
            if fabs(res) <= tol:
                converged = True
                break
            if res > 0.0:
                hi = T
            else:
                lo = T
            Tn = T - res / dres
            if not (lo < Tn and Tn < hi):
                Tn = 0.5 * (lo + hi)
            T = Tn
        if not converged:
            c.err_val = fabs(res)
            return ERR_CONV
        if dres > 0.0:
            T = T - res / dres      # polish to rounding level

    if T < T_LO or T > T_HI:
        c.err_val = T
        return ERR_WINDOW
    Tc = T if T > 1.0 else 1.0
    rvs = _es(c, Tc) / (c.R_v * Tc)
    if rvs < rm:
        rho_c = rm - rvs
    else:
        rho_c = 0.0
    rho_v = rm - rho_c              # exact complement: rho_v + rho_c == rho_m
    Tcache[0] = T

    p = (rd * c.R_d + rho_v * c.R_v) * T
    s.rd = rd
    s.rm = rm
    s.rr = rr
    s.rho = rho
    s.ux = ux
    s.uz = uz
    s.rho_v = rho_v
    s.rho_c = rho_c
    s.T = T
    s.p_pert = p - bp
    if c.rho_w_liquid:
        rho_w = 1000.0
    else:
        rho_w = rho_v + rho_c + rr
    if rr > 0.0 and rho_w > 0.0:
        s.v_r = c.vr_pref * pow(rr / rho_w, 0.125)
    else:
        s.v_r = 0.0
    gm = 1.0 + (rd * c.R_d + rho_v * c.R_v) \
        / (rd * c.c_vd + rho_v * c.c_vv + (rho_c + rr) * c.c_l)
    s.c_m = sqrt(gm * p / rho)
    return ERR_NONE


cdef inline void _flux(KernelContext c, const double* du, Sec* s,
                       double bp, double bE,
                       double* Fx, double* Fz) noexcept:
    cdef double rain = s.rr * s.v_r
    cdef double H = bE + du[5] + bp + s.p_pert
    cdef double ke = 0.5 * (s.ux * s.ux + s.uz * s.uz)
    Fx[0] = s.rd * s.ux
    Fz[0] = s.rd * s.uz
    Fx[1] = s.rm * s.ux
    Fz[1] = s.rm * s.uz
    Fx[2] = s.rr * s.ux
    Fz[2] = s.rr * s.uz - rain
    Fx[3] = du[3] * s.ux + s.p_pert
    Fz[3] = du[3] * s.uz - rain * s.ux
    Fx[4] = du[4] * s.ux
    Fz[4] = du[4] * s.uz - rain * s.uz + s.p_pert
    Fx[5] = H * s.ux
    Fz[5] = H * s.uz - (c.c_l * (s.T - c.T_ref) + ke) * rain


cdef inline void _source(KernelContext c, const double* du, Sec* s,
                         double* G) noexcept:
    cdef double net = 0.0
    cdef double rvs, rate, sev, sau, sac
    if c.micro_on:
        rvs = _es(c, s.T) / (c.R_v * s.T)
        rate = (3.86e-3 - 9.41e-5 * (s.T - c.T_ref)) \
            * (1.0 + 9.1 * pow(s.rr, 0.1875)) \
            * (rvs - s.rho_v) * sqrt(s.rr)
        sev = rate if rate > 0.0 else 0.0
        sau = s.rho_c - c.q_au * s.rho
        if sau < 0.0:
            sau = 0.0
        sau = 1e-3 * sau
        sac = 1.72 * s.rho_c * pow(s.rr, 0.875)
        net = sev - sau - sac
    G[0] = 0.0
    G[1] = net
    G[2] = -net
    G[3] = 0.0
    G[4] = -(du[0] + du[1] + du[2]) * c.g
    G[5] = -c.g * du[4]


cdef inline void _lf(KernelContext c, const double* um, const double* up,
                     Sec* sm, Sec* sp, double bp, double bE,
                     double nx_, double nz_, double* Fn) noexcept:
    # local Lax-Friedrichs: 1/2 (F- + F+).n + lambda/2 (u- - u+)
    cdef double Fmx[NC]
    cdef double Fmz[NC]
    cdef double Fpx[NC]
    cdef double Fpz[NC]
    cdef double lm, lp, lam
    cdef int comp
    _flux(c, um, sm, bp, bE, Fmx, Fmz)
    _flux(c, up, sp, bp, bE, Fpx, Fpz)
    lm = fabs(sm.ux * nx_ + sm.uz * nz_) + fabs(sm.v_r * nz_) + sm.c_m
    lp = fabs(sp.ux * nx_ + sp.uz * nz_) + fabs(sp.v_r * nz_) + sp.c_m
    lam = lm if lm > lp else lp
    for comp in range(NC):
        Fn[comp] = (Fmx[comp] + Fpx[comp]) * (0.5 * nx_) \
            + (Fmz[comp] + Fpz[comp]) * (0.5 * nz_) \
            + 0.5 * lam * (um[comp] - up[comp])


cdef inline void _ghost(const double* um, double nx_, double nz_,
                        double* up) noexcept:
    # slip wall: reflect the normal momentum
    cdef int comp
    cdef double mn
    for comp in range(NC):
        up[comp] = um[comp]
    mn = um[3] * nx_ + um[4] * nz_
    up[3] = um[3] - 2.0 * mn * nx_
    up[4] = um[4] - 2.0 * mn * nz_


# ---------------------------------------------------------------------------
# passes


cdef int _volume_pass(KernelContext c, double[:, :, ::1] coef) noexcept:
    cdef int e, comp, a, b, qx, qz, h, q2, code
    cdef int nq = c.nq, k1 = c.k1, nh = c.nq // 2
    cdef bint odd = c.nq & 1
    cdef double cf[NC][KM][KM]
    cdef double tz[NC][KM][QM]
    cdef double U[NC][QM][QM]
    cdef double Fx[NC][QM][QM]
    cdef double Fz[NC][QM][QM]
    cdef double G[NC][QM][QM]
    cdef double Axb[QM][KM]
    cdef double Azb[QM][KM]
    cdef double Agb[QM][KM]
    cdef double du[NC]
    cdef double f1[NC]
    cdef double f2[NC]
    cdef double g1[NC]
    cdef Sec s
    cdef double acc, lam, speed, sx, sz, sg
    cdef double scale_x = c.J * 2.0 / c.hx
    cdef double scale_z = c.J * 2.0 / c.hz
    cdef Py_ssize_t p, pb

    for e in range(c.nE):
        for comp in range(NC):
            for a in range(k1):
                for b in range(k1):
                    cf[comp][a][b] = coef[e, comp, a * k1 + b]
        # sum-factorized evaluation at the tensor quadrature points
        for comp in range(NC):
            for a in range(k1):
                for qz in range(nq):
                    acc = 0.0
                    for b in range(k1):
                        acc = acc + cf[comp][a][b] * c.B[b, qz]
                    tz[comp][a][qz] = acc
            for qx in range(nq):
                for qz in range(nq):
                    acc = 0.0
                    for a in range(k1):
                        acc = acc + tz[comp][a][qz] * c.B[a, qx]
                    U[comp][qx][qz] = acc
        # pointwise recovery, flux, source, wave speed
        lam = 0.0
        pb = (<Py_ssize_t> e) * nq * nq
        for qx in range(nq):
            for qz in range(nq):
                p = pb + qx * nq + qz
                for comp in range(NC):
                    du[comp] = U[comp][qx][qz]
                code = _recover_point(c, du, c.b_vol[0, p], c.b_vol[1, p],
                                      c.b_vol[2, p], c.b_vol[3, p],
                                      c.b_vol[4, p], &c.T_vol[p], &s)
                if code != ERR_NONE:
                    c.err_code = code
                    return -1
                _flux(c, du, &s, c.b_vol[3, p], c.b_vol[4, p], f1, f2)
                _source(c, du, &s, g1)
                for comp in range(NC):
                    Fx[comp][qx][qz] = f1[comp]
                    Fz[comp][qx][qz] = f2[comp]
                    G[comp][qx][qz] = g1[comp]
                speed = hypot(s.ux, s.uz) + s.c_m + fabs(s.v_r)
                if speed > lam:
                    lam = speed
                c.ux_vol[p] = s.ux
                c.uz_vol[p] = s.uz
                c.vr_vol[p] = s.v_r
        c.lambda_K[e] = lam
        # contract: r = -(Fx, dV/dx) - (Fz, dV/dz) - (G, V), x-sums paired
        for comp in range(NC):
            for qx in range(nq):
                for b in range(k1):
                    sx = 0.0
                    sz = 0.0
                    sg = 0.0
                    for qz in range(nq):
                        sx = sx + Fx[comp][qx][qz] * c.wB[b, qz]
                        sz = sz + Fz[comp][qx][qz] * c.wD[b, qz]
                        sg = sg + G[comp][qx][qz] * c.wB[b, qz]
                    Axb[qx][b] = sx
                    Azb[qx][b] = sz
                    Agb[qx][b] = sg
            for a in range(k1):
                for b in range(k1):
                    sx = 0.0
                    sz = 0.0
                    sg = 0.0
                    for h in range(nh):
                        q2 = nq - 1 - h
                        sx = sx + (c.wD[a, h] * Axb[h][b]
                                   + c.wD[a, q2] * Axb[q2][b])
                        sz = sz + (c.wB[a, h] * Azb[h][b]
                                   + c.wB[a, q2] * Azb[q2][b])
                        sg = sg + (c.wB[a, h] * Agb[h][b]
                                   + c.wB[a, q2] * Agb[q2][b])
                    if odd:
                        sx = sx + c.wD[a, nh] * Axb[nh][b]
                        sz = sz + c.wB[a, nh] * Azb[nh][b]
                        sg = sg + c.wB[a, nh] * Agb[nh][b]
                    c.r_vol[e, comp, a * k1 + b] = \
                        -(scale_x * sx) - scale_z * sz - c.J * sg
    return 0


cdef int _vertical_pass(KernelContext c, double[:, :, ::1] coef) noexcept:
    cdef int j, fi, f, em, ep, comp, a, b, qz, code
    cdef int nq = c.nq, k1 = c.k1
    cdef double ed_m[NC][KM]
    cdef double ed_p[NC][KM]
    cdef double um[NC][QM]
    cdef double up[NC][QM]
    cdef double FnA[NC][QM]
    cdef double Scb[NC][KM]
    cdef double u1[NC]
    cdef double u2[NC]
    cdef double Fn1[NC]
    cdef Sec sm, sp
    cdef double acc, ds = 0.5 * c.hz
    cdef Py_ssize_t p, pb

    for j in range(c.nz):
        for fi in range(c.nvf):
            em = j * c.nx + fi
            ep = em + 1 if fi < c.nx - 1 else j * c.nx
            f = j * c.nvf + fi
            pb = (<Py_ssize_t> f) * nq
            # traces: minus right edge (Br over a), plus left edge (Bl)
            for comp in range(NC):
                for b in range(k1):
                    acc = 0.0
                    for a in range(k1):
                        acc = acc + coef[em, comp, a * k1 + b] * c.Br[a]
                    ed_m[comp][b] = acc
                    acc = 0.0
                    for a in range(k1):
                        acc = acc + coef[ep, comp, a * k1 + b] * c.Bl[a]
                    ed_p[comp][b] = acc
                for qz in range(nq):
                    acc = 0.0
                    for b in range(k1):
                        acc = acc + ed_m[comp][b] * c.B[b, qz]
                    um[comp][qz] = acc
                    acc = 0.0
                    for b in range(k1):
                        acc = acc + ed_p[comp][b] * c.B[b, qz]
                    up[comp][qz] = acc
            for qz in range(nq):
                p = pb + qz
                for comp in range(NC):
                    u1[comp] = um[comp][qz]
                    u2[comp] = up[comp][qz]
                code = _recover_point(c, u1, c.b_vx[0, p], c.b_vx[1, p],
                                      c.b_vx[2, p], c.b_vx[3, p],
                                      c.b_vx[4, p], &c.T_vxm[p], &sm)
                if code != ERR_NONE:
                    c.err_code = code
                    return -1
                code = _recover_point(c, u2, c.b_vx[0, p], c.b_vx[1, p],
                                      c.b_vx[2, p], c.b_vx[3, p],
                                      c.b_vx[4, p], &c.T_vxp[p], &sp)
                if code != ERR_NONE:
                    c.err_code = code
                    return -1
                _lf(c, u1, u2, &sm, &sp, c.b_vx[3, p], c.b_vx[4, p],
                    1.0, 0.0, Fn1)
                for comp in range(NC):
                    FnA[comp][qz] = Fn1[comp]
            # scatter <Fn, [V]>: +ds to minus (Br), -ds to plus (Bl)
            for comp in range(NC):
                for b in range(k1):
                    acc = 0.0
                    for qz in range(nq):
                        acc = acc + (FnA[comp][qz] * (c.w1[qz] * ds)) \
                            * c.B[b, qz]
                    Scb[comp][b] = acc
                for a in range(k1):
                    for b in range(k1):
                        c.r_R[em, comp, a * k1 + b] = Scb[comp][b] * c.Br[a]
                        c.r_L[ep, comp, a * k1 + b] = \
                            -(Scb[comp][b] * c.Bl[a])
    return 0


cdef int _horizontal_pass(KernelContext c, double[:, :, ::1] coef) noexcept:
    cdef int r, i, f, em, ep, comp, a, b, qx, h, q2, code
    cdef int nq = c.nq, k1 = c.k1, nh = c.nq // 2
    cdef bint odd = c.nq & 1
    cdef double ed_m[NC][KM]
    cdef double ed_p[NC][KM]
    cdef double um[NC][QM]
    cdef double up[NC][QM]
    cdef double FnA[NC][QM]
    cdef double Sca[NC][KM]
    cdef double u1[NC]
    cdef double u2[NC]
    cdef double Fn1[NC]
    cdef Sec sm, sp
    cdef double acc, ds = 0.5 * c.hx
    cdef Py_ssize_t p, pb

    for r in range(c.nz - 1):
        for i in range(c.nx):
            em = r * c.nx + i
            ep = (r + 1) * c.nx + i
            f = r * c.nx + i
            pb = (<Py_ssize_t> f) * nq
            # traces: minus top edge (Br over b), plus bottom edge (Bl)
            for comp in range(NC):
                for a in range(k1):
                    acc = 0.0
                    for b in range(k1):
                        acc = acc + coef[em, comp, a * k1 + b] * c.Br[b]
                    ed_m[comp][a] = acc
                    acc = 0.0
                    for b in range(k1):
                        acc = acc + coef[ep, comp, a * k1 + b] * c.Bl[b]
                    ed_p[comp][a] = acc
                for qx in range(nq):
                    acc = 0.0
                    for a in range(k1):
                        acc = acc + ed_m[comp][a] * c.B[a, qx]
                    um[comp][qx] = acc
                    acc = 0.0
                    for a in range(k1):
                        acc = acc + ed_p[comp][a] * c.B[a, qx]
                    up[comp][qx] = acc
            for qx in range(nq):
                p = pb + qx
                for comp in range(NC):
                    u1[comp] = um[comp][qx]
                    u2[comp] = up[comp][qx]
                code = _recover_point(c, u1, c.b_hz[0, p], c.b_hz[1, p],
                                      c.b_hz[2, p], c.b_hz[3, p],
                                      c.b_hz[4, p], &c.T_hzm[p], &sm)
                if code != ERR_NONE:
                    c.err_code = code
                    return -1
                code = _recover_point(c, u2, c.b_hz[0, p], c.b_hz[1, p],
                                      c.b_hz[2, p], c.b_hz[3, p],
                                      c.b_hz[4, p], &c.T_hzp[p], &sp)
                if code != ERR_NONE:
                    c.err_code = code
                    return -1
                _lf(c, u1, u2, &sm, &sp, c.b_hz[3, p], c.b_hz[4, p],
                    0.0, 1.0, Fn1)
                for comp in range(NC):
                    FnA[comp][qx] = Fn1[comp]
            for comp in range(NC):
                for a in range(k1):
                    acc = 0.0
                    for h in range(nh):
                        q2 = nq - 1 - h
                        acc = acc \
                            + ((FnA[comp][h] * (c.w1[h] * ds)) * c.B[a, h]
                               + (FnA[comp][q2] * (c.w1[q2] * ds))
                               * c.B[a, q2])
                    if odd:
                        acc = acc + (FnA[comp][nh] * (c.w1[nh] * ds)) \
                            * c.B[a, nh]
                    Sca[comp][a] = acc
                for a in range(k1):
                    for b in range(k1):
                        c.r_T[em, comp, a * k1 + b] = Sca[comp][a] * c.Br[b]
                        c.r_B[ep, comp, a * k1 + b] = \
                            -(Sca[comp][a] * c.Bl[b])
    return 0


cdef int _horizontal_wall(KernelContext c, double[:, :, ::1] coef,
                          bint top, double weight) noexcept:
    # bottom wall: normal (0,-1), trace through Bl; top: (0,+1), Br
    cdef int i, e, comp, a, b, qx, h, q2, code
    cdef int nq = c.nq, k1 = c.k1, nh = c.nq // 2
    cdef bint odd = c.nq & 1
    cdef double nz_ = 1.0 if top else -1.0
    cdef double ed[NC][KM]
    cdef double um[NC][QM]
    cdef double FnA[NC][QM]
    cdef double Sca[NC][KM]
    cdef double u1[NC]
    cdef double u2[NC]
    cdef double Fn1[NC]
    cdef Sec sm, sp
    cdef double acc, fall, ds = 0.5 * c.hx
    cdef double[:, ::1] base = c.b_top if top else c.b_bot
    cdef double[::1] edge = c.Br if top else c.Bl
    cdef double[::1] cache_m = c.T_topm if top else c.T_botm
    cdef double[::1] cache_p = c.T_topp if top else c.T_botp
    cdef Py_ssize_t p, pb

    for i in range(c.nx):
        e = (c.nz - 1) * c.nx + i if top else i
        pb = (<Py_ssize_t> i) * nq
        for comp in range(NC):
            for a in range(k1):
                acc = 0.0
                for b in range(k1):
                    acc = acc + coef[e, comp, a * k1 + b] * edge[b]
                ed[comp][a] = acc
            for qx in range(nq):
                acc = 0.0
                for a in range(k1):
                    acc = acc + ed[comp][a] * c.B[a, qx]
                um[comp][qx] = acc
        for qx in range(nq):
            p = pb + qx
            for comp in range(NC):
                u1[comp] = um[comp][qx]
            _ghost(u1, 0.0, nz_, u2)
            code = _recover_point(c, u1, base[0, p], base[1, p],
                                  base[2, p], base[3, p], base[4, p],
                                  &cache_m[p], &sm)
            if code != ERR_NONE:
                c.err_code = code
                return -1
            code = _recover_point(c, u2, base[0, p], base[1, p],
                                  base[2, p], base[3, p], base[4, p],
                                  &cache_p[p], &sp)
            if code != ERR_NONE:
                c.err_code = code
                return -1
            _lf(c, u1, u2, &sm, &sp, base[3, p], base[4, p], 0.0, nz_, Fn1)
            for comp in range(NC):
                FnA[comp][qx] = Fn1[comp]
        if not top and weight != 0.0:
            # quadrature-weighted rain flux actually applied on this facet
            fall = 0.0
            for h in range(nh):
                q2 = nq - 1 - h
                fall = fall + (FnA[2][h] * c.w1[h] + FnA[2][q2] * c.w1[q2])
            if odd:
                fall = fall + FnA[2][nh] * c.w1[nh]
            c.fallout[i] = c.fallout[i] + weight * (fall * ds)
        for comp in range(NC):
            for a in range(k1):
                acc = 0.0
                for h in range(nh):
                    q2 = nq - 1 - h
                    acc = acc + ((FnA[comp][h] * (c.w1[h] * ds)) * c.B[a, h]
                                 + (FnA[comp][q2] * (c.w1[q2] * ds))
                                 * c.B[a, q2])
                if odd:
                    acc = acc + (FnA[comp][nh] * (c.w1[nh] * ds)) \
                        * c.B[a, nh]
                Sca[comp][a] = acc
            for a in range(k1):
                for b in range(k1):
                    if top:
                        c.r_T[e, comp, a * k1 + b] = Sca[comp][a] * c.Br[b]
                    else:
                        c.r_B[e, comp, a * k1 + b] = Sca[comp][a] * c.Bl[b]
    return 0


cdef int _vertical_wall(KernelContext c, double[:, :, ::1] coef,
                        bint right) noexcept:
    # left wall: normal (-1,0), trace through Bl; right: (+1,0), Br
    cdef int j, e, comp, a, b, qz, code
    cdef int nq = c.nq, k1 = c.k1
    cdef double nx_ = 1.0 if right else -1.0
    cdef double ed[NC][KM]
    cdef double um[NC][QM]
    cdef double FnA[NC][QM]
    cdef double Scb[NC][KM]
    cdef double u1[NC]
    cdef double u2[NC]
    cdef double Fn1[NC]
    cdef Sec sm, sp
    cdef double acc, ds = 0.5 * c.hz
    cdef double[:, ::1] base = c.b_rgt if right else c.b_lft
    cdef double[::1] edge = c.Br if right else c.Bl
    cdef double[::1] cache_m = c.T_rgtm if right else c.T_lftm
    cdef double[::1] cache_p = c.T_rgtp if right else c.T_lftp
    cdef Py_ssize_t p, pb

    for j in range(c.nz):
        e = j * c.nx + (c.nx - 1) if right else j * c.nx
        pb = (<Py_ssize_t> j) * nq
        for comp in range(NC):
            for b in range(k1):
                acc = 0.0
                for a in range(k1):
                    acc = acc + coef[e, comp, a * k1 + b] * edge[a]
                ed[comp][b] = acc
            for qz in range(nq):
                acc = 0.0
                for b in range(k1):
                    acc = acc + ed[comp][b] * c.B[b, qz]
                um[comp][qz] = acc
        for qz in range(nq):
            p = pb + qz
            for comp in range(NC):
                u1[comp] = um[comp][qz]
            _ghost(u1, nx_, 0.0, u2)
            code = _recover_point(c, u1, base[0, p], base[1, p],
                                  base[2, p], base[3, p], base[4, p],
                                  &cache_m[p], &sm)
            if code != ERR_NONE:
                c.err_code = code
                return -1
            code = _recover_point(c, u2, base[0, p], base[1, p],
                                  base[2, p], base[3, p], base[4, p],
                                  &cache_p[p], &sp)
            if code != ERR_NONE:
                c.err_code = code
                return -1
            _lf(c, u1, u2, &sm, &sp, base[3, p], base[4, p], nx_, 0.0, Fn1)
            for comp in range(NC):
                FnA[comp][qz] = Fn1[comp]
        for comp in range(NC):
            for b in range(k1):
                acc = 0.0
                for qz in range(nq):
                    acc = acc + (FnA[comp][qz] * (c.w1[qz] * ds)) \
                        * c.B[b, qz]
                Scb[comp][b] = acc
            for a in range(k1):
                for b in range(k1):
                    if right:
                        c.r_R[e, comp, a * k1 + b] = Scb[comp][b] * c.Br[a]
                    else:
                        c.r_L[e, comp, a * k1 + b] = Scb[comp][b] * c.Bl[a]
    return 0


cdef void _combine(KernelContext c, double[:, :, ::1] out) noexcept:
    # out = -(r_vol + (r_L + r_R) + (r_B + r_T)) / J, fixed operand tree
    cdef int e, comp, mm
    cdef int nmodes = c.k1 * c.k1
    for e in range(c.nE):
        for comp in range(NC):
            for mm in range(nmodes):
                out[e, comp, mm] = -((c.r_vol[e, comp, mm]
                                      + (c.r_L[e, comp, mm]
                                         + c.r_R[e, comp, mm])
                                      + (c.r_B[e, comp, mm]
                                         + c.r_T[e, comp, mm])) / c.J)


def rhs(KernelContext c, double[:, :, ::1] coef, double weight,
        double[:, :, ::1] out):
    """Assemble L(U) into ``out``; accumulate stage-weighted rain fallout.

    Also refreshes the per-element wave speeds and the volume-point
    velocity exports shared with the operator.  Raises the same error
    types as the numpy path when the pointwise recovery fails.
    """
    cdef int nmodes = c.k1 * c.k1
    if (coef.shape[0] != c.nE or coef.shape[1] != NC
            or coef.shape[2] != nmodes or out.shape[0] != c.nE
            or out.shape[1] != NC or out.shape[2] != nmodes):
        raise ValueError("coefficient array shape does not match the mesh")
    c.err_code = ERR_NONE
    c.err_val = 0.0
    cdef bint ok = _volume_pass(c, coef) == 0
    if ok:
        ok = _vertical_pass(c, coef) == 0
    if ok:
        ok = _horizontal_pass(c, coef) == 0
    if ok:
        ok = _horizontal_wall(c, coef, False, weight) == 0
    if ok:
        ok = _horizontal_wall(c, coef, True, weight) == 0
    if ok and not c.periodic:
        ok = _vertical_wall(c, coef, False) == 0
        if ok:
            _vertical_wall(c, coef, True)
    if c.err_code == ERR_RHO_D:
        raise DomainError("recovery requires rho_d > 0 everywhere")
    if c.err_code == ERR_CONV:
        raise RecoveryError("batch condensation recovery did not converge",
                            residual=c.err_val)
    if c.err_code == ERR_WINDOW:
        raise RecoveryError(
            f"recovered temperature {c.err_val:.2f} K outside "
            f"[{T_LO}, {T_HI}] K")
    _combine(c, out)
