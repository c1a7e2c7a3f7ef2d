"""The assembled semi-discrete operator: balance, free-stream, fallout."""

import numpy as np
import pytest

from moistdg import profiles as pf
from moistdg.assembly import Discretization, eval_volume
from moistdg.errors import ConfigurationError
from moistdg.mesh import build_mesh
from moistdg.microphysics import terminal_rain_velocity
from moistdg.model import NCOMP, BaseStateArrays, physical_flux, \
    recover_secondary
from moistdg.operator import MIRROR_SIGNS, MoistOperator, \
    project_pointwise, select_backend, symmetrize_x
from moistdg.thermo import DEFAULT_CONSTANTS, internal_energy, pressure
from moistdg.timestep import ssprk43_step


try:
    HAVE_COMPILED = select_backend("auto") == "compiled"
except ConfigurationError:
    HAVE_COMPILED = False
needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernels not available")
BACKENDS = ["fallback",
            pytest.param("compiled", marks=needs_compiled)]


def _uniform_base(rho_d=1.1, rho_v=0.008, rho_c=0.002, T=285.0):
    """Thermodynamically consistent constant base state (columns ignored)."""
    p = pressure(rho_d, rho_v, T)
    E = internal_energy(rho_d, rho_v, rho_c, 0.0, T)

    def base_fn(z):
        n = np.shape(np.asarray(z))
        return BaseStateArrays(rho_d=np.full(n, rho_d),
                               rho_m=np.full(n, rho_v + rho_c),
                               rho_r=np.zeros(n), p=np.full(n, p),
                               E=np.full(n, E), T=np.full(n, T))

    return base_fn


def test_select_backend(monkeypatch):
    monkeypatch.delenv("MOISTDG_BACKEND", raising=False)
    assert select_backend("fallback") == "fallback"
    assert select_backend("auto") in ("compiled", "fallback")
    monkeypatch.setenv("MOISTDG_BACKEND", "fallback")
    assert select_backend("auto") == "fallback", "environment wins"
    monkeypatch.setenv("MOISTDG_BACKEND", "bogus")
    with pytest.raises(ConfigurationError):
        select_backend("auto")


def test_operator_needs_six_components():
    mesh = build_mesh(2, 2, ((0.0, 1.0), (0.0, 1.0)), periodic_x=True)
    disc = Discretization(mesh, k=1, ncomp=2)
    with pytest.raises(ConfigurationError):
        MoistOperator(disc, _uniform_base(), backend="fallback")


@pytest.mark.parametrize("backend", BACKENDS)
def test_uniform_free_stream_preserved(backend):
    # constant conserved perturbation over a uniform base, horizontal
    # velocity only, vanishing gravity: the residual must cancel to
    # rounding relative to the flux it transports
    const = DEFAULT_CONSTANTS.with_overrides(g=1e-300)
    mesh = build_mesh(4, 3, ((0.0, 2.0), (0.0, 1.5)), periodic_x=True)
    disc = Discretization(mesh, k=2, ncomp=NCOMP)
    base_fn = _uniform_base()
    op = MoistOperator(disc, base_fn, const=const,
                       microphysics_enabled=False, backend=backend)
    ux = 5.0
    base = base_fn(np.zeros(1))
    rho = float(base.rho_d[0] + base.rho_m[0])
    du = np.array([0.02, 0.001, 0.0, (rho + 0.021) * ux, 0.0, 150.0])
    coef = disc.zeros()
    coef[:, :, 0] = 2.0 * du[None, :]  # mode 0 of the orthonormal basis is 1/2
    r = op.rhs(coef, 0.0)
    S = recover_secondary(du[:, None], base, params=op.params, const=const)
    assert np.abs(S.uz).max() == 0.0, "no vertical motion in this setup"
    F = physical_flux(du[:, None], S, base, const)
    rel = np.abs(r).max() * min(mesh.hx, mesh.hz) / np.abs(F).max()
    assert rel < 1e-12, f"free-stream residual, relative size {rel:.3e}"


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("case", ["temperature", "saturated", "humidity"])
def test_at_rest_balance(case, backend):
    # zero perturbation over a consistent column: machine-level residual
    if case == "temperature":
        prof = pf.hydrostatic_temperature_profile(288.15, 213.15, 1.0e4,
                                                  1.0e5, 40.0e3)
        mesh = build_mesh(5, 8, ((0.0, 35.0e3), (0.0, 40.0e3)),
                          periodic_x=True)
        micro = True
    elif case == "saturated":
        theta = lambda z: 300.0 * np.exp(1e-4 * np.asarray(z, float) / 9.81)
        prof = pf.hydrostatic_saturated_qw(theta, 0.02, 1.0e5, 10.0e3)
        mesh = build_mesh(6, 5, ((0.0, 60.0e3), (0.0, 10.0e3)),
                          periodic_x=True)
        micro = False  # base clouds sit above the autoconversion threshold
    else:
        prof, _ = pf.rain_thermal_state()
        mesh = build_mesh(6, 6, ((0.0, 3.6e3), (0.0, 2.4e3)),
                          periodic_x=True)
        micro = True
    disc = Discretization(mesh, k=2, ncomp=NCOMP)
    op = MoistOperator(disc, prof.base_state, microphysics_enabled=micro,
                       backend=backend)
    r = op.rhs(disc.zeros(), 0.0)
    assert np.abs(r).max() < 1e-9, \
        f"{case}: at-rest residual {np.abs(r).max():.3e}"


@pytest.mark.parametrize("backend", BACKENDS)
def test_at_rest_stays_at_rest_under_time_stepping(backend):
    prof = pf.hydrostatic_temperature_profile(288.15, 213.15, 1.0e4,
                                              1.0e5, 20.0e3)
    mesh = build_mesh(4, 5, ((0.0, 20.0e3), (0.0, 20.0e3)), periodic_x=True)
    disc = Discretization(mesh, k=1, ncomp=NCOMP)
    op = MoistOperator(disc, prof.base_state, backend=backend)
    u = disc.zeros()
    for _ in range(20):
        u = ssprk43_step(u, 0.5, op.rhs)
    vals = eval_volume(disc, u)
    shape = (mesh.n_elements, disc.nq, disc.nq)
    rho = (op.base_vol.rho_d + op.base_vol.rho_m).reshape(shape) \
        + vals[:, 0] + vals[:, 1] + vals[:, 2]
    speed = np.hypot(vals[:, 3], vals[:, 4]) / rho
    assert speed.max() < 1e-8, f"spurious velocity {speed.max():.3e} m/s"
    assert np.abs(vals[:, 0]).max() < 1e-8, "density stays put"


def _ex1_setup(nx=30, nz=10, k=1):
    theta = lambda z: 300.0 * np.exp(1e-4 * np.asarray(z, float) / 9.81)
    prof = pf.hydrostatic_saturated_qw(theta, 0.02, 1.0e5, 10.0e3)

    def pert(x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        return 0.01 / (1.0 + ((x - 150.0e3) / 5.0e3) ** 2) \
            * np.sin(np.pi * z / 10.0e3)

    ic = pf.gravity_wave_perturbation(prof, pert, q_w=0.02)
    mesh = build_mesh(nx, nz, ((0.0, 300.0e3), (0.0, 10.0e3)),
                      periodic_x=True)
    disc = Discretization(mesh, k=k, ncomp=NCOMP)
    op = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                       backend="fallback")
    return disc, op, project_pointwise(disc, ic)


def test_gravity_wave_short_run_conserves_mass():
    disc, op, u = _ex1_setup()
    mesh = disc.mesh
    area = 2.0 * mesh.jacobian
    mass0 = u[:, 0, 0].sum() * area
    water0 = (u[:, 1, 0] + u[:, 2, 0]).sum() * area
    norm0 = np.linalg.norm(u)
    for _ in range(10):
        u = ssprk43_step(u, 1.0, op.rhs)
    assert np.all(np.isfinite(u)), "short run stays finite"
    w1 = disc.tables.rule.weights_1d
    bd = op.base_vol.rho_d.reshape(mesh.n_elements, disc.nq, disc.nq)
    base_mass = np.einsum("eqr,q,r->", bd, w1, w1) * mesh.jacobian
    mass1 = u[:, 0, 0].sum() * area
    water1 = (u[:, 1, 0] + u[:, 2, 0]).sum() * area
    assert abs(mass1 - mass0) < 1e-10 * base_mass, \
        f"dry-mass drift {abs(mass1 - mass0):.3e} of {base_mass:.3e}"
    assert abs(water1 - water0) < 1e-10 * base_mass
    assert np.linalg.norm(u) < 2.0 * norm0, "perturbation stays bounded"
    assert op.total_fallout() == 0.0, "no rain in this configuration"


@pytest.mark.parametrize("backend", BACKENDS)
def test_fallout_accumulates_bottom_rain_flux(backend):
    base_fn = _uniform_base()
    mesh = build_mesh(5, 3, ((0.0, 10.0), (0.0, 6.0)), periodic_x=True)
    disc = Discretization(mesh, k=1, ncomp=NCOMP)
    op = MoistOperator(disc, base_fn, microphysics_enabled=False,
                       backend=backend)
    rho_r = 1.2e-3
    coef = disc.zeros()
    coef[:, 2, 0] = 2.0 * rho_r
    dt = 0.25
    op.rhs(coef, dt)
    base = base_fn(np.zeros(1))
    # rho_v + rho_c is conserved by the recovery, so the oracle fall
    # speed only needs the total moisture, not the recovered split
    v_r = terminal_rain_velocity(float(base.rho_m[0]), 0.0, rho_r)
    w1 = disc.tables.rule.weights_1d
    expect = dt * rho_r * v_r * 0.5 * mesh.hx * w1.sum()
    assert v_r > 0.0
    assert np.allclose(op.fallout_profile, expect, rtol=1e-12), \
        f"fallout per column {op.fallout_profile} vs {expect}"
    assert abs(op.total_fallout() - mesh.nx * expect) < 1e-12 * expect
    before = op.fallout_profile.copy()
    op.rhs(coef, 0.0)
    assert np.array_equal(op.fallout_profile, before), \
        "zero stage weight leaves the accumulator untouched"


def test_estimate_dt_matches_captured_wave_speed():
    disc, op, u = _ex1_setup(nx=10, nz=4)
    dt = op.estimate_dt(u, cfl=0.9)
    lam = op.lambda_K.max()
    expect = 0.9 * min(disc.mesh.hx, disc.mesh.hz) / (lam * (2 * disc.k + 1))
    assert abs(dt - expect) < 1e-12 * expect
    assert 250.0 < lam < 500.0, f"wave speed {lam} out of atmospheric range"


def test_artificial_diffusion_dissipates():
    theta = lambda z: 300.0 * np.exp(1e-4 * np.asarray(z, float) / 9.81)
    prof = pf.hydrostatic_saturated_qw(theta, 0.02, 1.0e5, 10.0e3)
    mesh = build_mesh(8, 4, ((0.0, 80.0e3), (0.0, 10.0e3)), periodic_x=True)
    disc = Discretization(mesh, k=1, ncomp=NCOMP)
    op0 = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                        backend="fallback")
    op1 = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                        viscosity_gamma=0.06, backend="fallback")
    rng = np.random.default_rng(7)
    u = disc.zeros()
    u[:, 3, :] = 5.0 * rng.standard_normal(u[:, 3, :].shape)
    r0 = op0.rhs(u, 0.0)
    r1 = op1.rhs(u, 0.0)
    diff = r1 - r0
    assert np.abs(diff).max() > 0.0, "viscosity must alter the residual"
    # with the diagonal mass the coefficient inner product measures the
    # quadratic energy: the penalized interior-penalty form drains it
    power = np.sum(u * diff)
    assert power < 0.0, f"artificial diffusion must dissipate, got {power}"


def test_symmetrize_x_is_mirror_projection():
    mesh = build_mesh(6, 3, ((0.0, 12.0), (0.0, 6.0)), periodic_x=True)
    disc = Discretization(mesh, k=2, ncomp=NCOMP)
    rng = np.random.default_rng(3)
    coef = rng.standard_normal(disc.shape)
    sym = symmetrize_x(disc, coef)
    k1 = disc.k + 1
    signs = np.array([1.0, 1.0, 1.0, -1.0, 1.0, 1.0])
    mode = np.array([(-1.0) ** a for a in range(k1)])
    c = sym.reshape(mesh.nz, mesh.nx, NCOMP, k1, k1)
    mirrored = c[:, ::-1] * signs[None, None, :, None, None] \
        * mode[None, None, None, :, None]
    assert np.array_equal(c, mirrored), "projection output is mirror-fixed"
    again = symmetrize_x(disc, sym)
    assert np.array_equal(again, sym), "projection is idempotent bitwise"


def _per_component_close(r_ref, r_other, rtol):
    """Require agreement relative to each component's own magnitude."""
    for c in range(NCOMP):
        scale = np.abs(r_ref[:, c]).max()
        diff = np.abs(r_other[:, c] - r_ref[:, c]).max()
        assert diff <= rtol * scale + 1e-30, \
            f"component {c}: diff {diff:.3e} vs scale {scale:.3e}"


@needs_compiled
def test_backend_paths_agree_closely():
    # the compiled path reorders the quadrature reductions (sum
    # factorization vs einsum), so agreement is to rounding, not bitwise;
    # fresh operators so both start from the same recovery guesses
    disc, op_f, u = _ex1_setup(nx=6, nz=3)
    theta = lambda z: 300.0 * np.exp(1e-4 * np.asarray(z, float) / 9.81)
    prof = pf.hydrostatic_saturated_qw(theta, 0.02, 1.0e5, 10.0e3)
    op_c = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                         backend="compiled")
    r_f = np.asarray(op_f.rhs(u, 0.3))
    r_c = np.asarray(op_c.rhs(u, 0.3)).copy()
    _per_component_close(r_f, r_c, 2e-9)
    assert np.array_equal(op_f.fallout_profile, op_c.fallout_profile), \
        "no rain here, both accumulators stay exactly zero"
    assert np.allclose(op_c.lambda_K, op_f.lambda_K, rtol=1e-12)


@needs_compiled
def test_backend_paths_agree_with_microphysics_and_viscosity():
    # walls, saturation adjustment, rain fallout and the penalized
    # artificial-diffusion term all active at once
    prof, ic = pf.rain_thermal_state()
    mesh = build_mesh(12, 8, ((0.0, 3.6e3), (0.0, 2.4e3)), periodic_x=False)
    disc = Discretization(mesh, k=1, ncomp=NCOMP)
    u = project_pointwise(disc, ic)
    u[:, 2, 0] += 1e-4  # seed rain so the fall-speed paths are exercised
    res = {}
    for be in ("compiled", "fallback"):
        op = MoistOperator(disc, prof.base_state, microphysics_enabled=True,
                           viscosity_gamma=0.06, backend=be)
        res[be] = (np.asarray(op.rhs(u, 0.02)).copy(),
                   op.fallout_profile.copy(), op.lambda_K.copy())
    r_c, fall_c, lam_c = res["compiled"]
    r_f, fall_f, lam_f = res["fallback"]
    _per_component_close(r_f, r_c, 2e-9)
    assert fall_f.max() > 0.0, "seeded rain must rain out"
    assert np.allclose(fall_c, fall_f, rtol=1e-12)
    assert np.allclose(lam_c, lam_f, rtol=1e-12)


def _mirror(disc, coef):
    """The x-reflection of a coefficient array about the domain center."""
    m = disc.mesh
    k1 = disc.k + 1
    c = np.asarray(coef).reshape(m.nz, m.nx, NCOMP, k1, k1)
    mode = np.array([(-1.0) ** a for a in range(k1)])
    sign = MIRROR_SIGNS[:, None, None] * mode[None, :, None]
    return (c[:, ::-1] * sign).reshape(m.n_elements, NCOMP, disc.nmodes)


def _bubble_setup(nx):
    theta = lambda z: 300.0 * np.exp(1e-4 * np.asarray(z, float) / 9.81)
    prof = pf.hydrostatic_saturated_qw(theta, 0.02, 1.0e5, 10.0e3)
    ic = pf.bryan_fritsch_state(prof)
    mesh = build_mesh(nx, 10, ((0.0, 20.0e3), (0.0, 10.0e3)),
                      periodic_x=True)
    disc = Discretization(mesh, k=1, ncomp=NCOMP)
    return disc, prof, ic


@needs_compiled
def test_compiled_rhs_is_mirror_equivariant_bitwise():
    # reflecting the input must reflect the output exactly: the compiled
    # quadrature reductions pair mirror-image points so every rounding
    # error is committed symmetrically
    disc, prof, ic = _bubble_setup(20)
    u = project_pointwise(disc, ic)
    u[:, 3, 0] += 0.3   # generic horizontal motion, not mirror-fixed
    u[:, 4, 0] += 0.2
    op_a = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                         backend="compiled")
    op_b = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                         backend="compiled")
    r = np.asarray(op_a.rhs(u, 0.0)).copy()
    r_m = np.asarray(op_b.rhs(_mirror(disc, u), 0.0)).copy()
    assert np.array_equal(r_m, _mirror(disc, r)), \
        "rhs does not commute with the x-mirror bitwise"


@needs_compiled
@pytest.mark.parametrize("nx", [20, 21])
def test_symmetric_state_stays_symmetric_bitwise(nx):
    # a mirror-symmetric bubble must stay bitwise symmetric under time
    # stepping, for meshes with and without a center column
    disc, prof, ic = _bubble_setup(nx)
    op = MoistOperator(disc, prof.base_state, microphysics_enabled=False,
                       backend="compiled")
    u = symmetrize_x(disc, project_pointwise(disc, ic))
    r = np.asarray(op.rhs(u, 0.0)).copy()
    assert np.array_equal(r, _mirror(disc, r)), "rhs breaks symmetry"
    for _ in range(20):
        u = ssprk43_step(u, 0.5, op.rhs)
    assert np.array_equal(u, _mirror(disc, u)), \
        f"nx={nx}: symmetry lost after 20 steps"
