"""Tests for the explicit integrators, sponge layer and dt estimate."""

import numpy as np
import pytest

from moistdg import assembly, mesh, timestep
from moistdg.assembly import Discretization
from moistdg.errors import ConfigurationError, NumericalError
from moistdg.timestep import SpongeLayer


def test_euler_zero_rhs_identity():
    u = np.array([1.0, -2.0, 3.0])
    out = timestep.explicit_euler_step(u, 0.1, lambda v, w: 0.0 * v)
    assert np.all(out == u)


def test_euler_scalar_ode():
    # u' = -u: one step gives u (1 - dt)
    u = np.array([2.0])
    out = timestep.explicit_euler_step(u, 0.25, lambda v, w: -v)
    assert out[0] == pytest.approx(2.0 * 0.75, rel=1e-15)


def test_ssprk43_zero_rhs_identity():
    u = np.array([1.0, -2.0])
    out = timestep.ssprk43_step(u, 0.5, lambda v, w: 0.0 * v)
    assert np.allclose(out, u, rtol=1e-15)


def test_ssprk43_stability_polynomial():
    # u' = lambda u: one step must reproduce
    # 1 + z + z^2/2 + z^3/6 + z^4/48 exactly
    for z in (-0.3, 0.7, -1.5, 2.0 + 0.0j, complex(-0.5, 1.2)):
        u = np.array([1.0 + 0.0j])
        lam = z       # take dt = 1
        out = timestep.ssprk43_step(u, 1.0, lambda v, w: lam * v)
        expect = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 48
        assert abs(out[0] - expect) <= 1e-14 * max(1.0, abs(expect)), z


def test_ssprk43_third_order_convergence():
    # u' = cos(t) via time-augmented system; Richardson slope ~ 3
    def solve(dt):
        t, u = 0.0, 0.0
        n = round(1.0 / dt)
        for _ in range(n):
            # augment: y = (u, t), y' = (cos(t), 1)
            y = np.array([u, t])
            y = timestep.ssprk43_step(
                y, dt, lambda v, w: np.array([np.cos(v[1]), 1.0]))
            u, t = y
        return u

    errs = [abs(solve(dt) - np.sin(1.0)) for dt in (0.1, 0.05, 0.025)]
    rates = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(r > 2.7 for r in rates), rates


def test_ssprk43_stage_weights_sum_to_one():
    assert sum(timestep.SSPRK43_WEIGHTS) == pytest.approx(1.0, abs=1e-16)
    # the weights passed to rhs must be (1/6, 1/6, 1/6, 1/2) * dt
    seen = []
    timestep.ssprk43_step(np.zeros(1), 0.6,
                          lambda v, w: (seen.append(w), 0.0 * v)[1])
    assert np.allclose(seen, [0.1, 0.1, 0.1, 0.3], rtol=1e-15)


def test_integrators_reject_bad_dt():
    with pytest.raises(ConfigurationError):
        timestep.explicit_euler_step(np.zeros(1), 0.0, lambda v, w: v)
    with pytest.raises(ConfigurationError):
        timestep.ssprk43_step(np.zeros(1), -1.0, lambda v, w: v)


# ---------------------------------------------------------------------------
# sponge


def test_sponge_profile_endpoints():
    sp = SpongeLayer(z_D=15e3, z_T=40e3, alpha=0.1)
    assert timestep.sponge_profile(10e3, sp) == 0.0
    assert timestep.sponge_profile(15e3, sp) == 0.0
    assert timestep.sponge_profile(40e3, sp) == pytest.approx(0.1, rel=1e-15)
    mid = timestep.sponge_profile(27.5e3, sp)
    assert mid == pytest.approx(0.05, rel=1e-12)


def test_sponge_validation():
    with pytest.raises(ConfigurationError):
        SpongeLayer(z_D=1.0, z_T=2.0, alpha=-0.1)
    with pytest.raises(ConfigurationError):
        SpongeLayer(z_D=2.0, z_T=1.0, alpha=0.5)


def test_apply_sponge_alpha_zero_is_identity():
    m = mesh.build_mesh(2, 2, ((0.0, 2.0), (0.0, 40.0)), periodic_x=True)
    d = Discretization(mesh=m, k=1, ncomp=2)
    rng = np.random.default_rng(5)
    coef = rng.standard_normal(d.shape)
    out = timestep.apply_sponge(d, coef, SpongeLayer(0.0, 40.0, 0.0))
    assert np.all(out == coef)


def test_apply_sponge_below_layer_unchanged():
    m = mesh.build_mesh(2, 4, ((0.0, 2.0), (0.0, 40.0)), periodic_x=True)
    d = Discretization(mesh=m, k=2, ncomp=3)
    rng = np.random.default_rng(0)
    coef = rng.standard_normal(d.shape)
    sp = SpongeLayer(z_D=20.0, z_T=40.0, alpha=0.5)
    out = timestep.apply_sponge(d, coef, sp)
    # bottom two element rows (z < 20) keep their coefficients exactly
    lo = slice(0, 2 * m.nx)
    assert np.allclose(out[lo], coef[lo], rtol=0, atol=1e-14)
    # top rows are damped
    assert not np.allclose(out[2 * m.nx:], coef[2 * m.nx:])


def test_apply_sponge_is_contractive_blend():
    # projection of the pointwise convex blend: the L2 norm can only
    # shrink, and pointwise values stay within the blend range up to the
    # small projection remainder of the non-polynomial profile
    m = mesh.build_mesh(1, 40, ((0.0, 1.0), (0.0, 40.0)), periodic_x=True)
    d = Discretization(mesh=m, k=1, ncomp=1)
    rng = np.random.default_rng(1)
    coef = rng.standard_normal(d.shape)
    sp = SpongeLayer(z_D=0.0, z_T=40.0, alpha=1.0)
    out = timestep.apply_sponge(d, coef, sp)
    before = assembly.eval_volume(d, coef)
    after = assembly.eval_volume(d, out)
    assert np.linalg.norm(out) <= np.linalg.norm(coef)
    slack = 0.01 * np.max(np.abs(before))
    assert np.all(np.abs(after) <= np.abs(before) + slack)


def test_apply_sponge_identityish_when_alpha_tiny():
    m = mesh.build_mesh(1, 2, ((0.0, 1.0), (0.0, 40.0)), periodic_x=True)
    d = Discretization(mesh=m, k=1, ncomp=1)
    coef = np.ones(d.shape)
    sp = SpongeLayer(z_D=39.9999, z_T=40.0, alpha=1e-12)
    out = timestep.apply_sponge(d, coef, sp)
    assert np.allclose(out, coef, atol=1e-10)


# ---------------------------------------------------------------------------
# dt estimate


def test_estimate_dt_formula():
    m = mesh.build_mesh(4, 2, ((0.0, 4000.0), (0.0, 2000.0)), periodic_x=True)
    lam = np.full(m.n_elements, 350.0)
    dt = timestep.estimate_dt(m, 1, 1.0, lam)
    assert dt == pytest.approx(1000.0 / (350.0 * 3), rel=1e-15)


def test_estimate_dt_scales_with_h_and_k():
    m1 = mesh.build_mesh(4, 2, ((0.0, 4000.0), (0.0, 2000.0)))
    m2 = mesh.build_mesh(2, 1, ((0.0, 4000.0), (0.0, 2000.0)))
    lam = 300.0
    dt1 = timestep.estimate_dt(m1, 1, 1.0, [lam])
    dt2 = timestep.estimate_dt(m2, 1, 1.0, [lam])
    assert dt2 == pytest.approx(2 * dt1, rel=1e-15)
    dt3 = timestep.estimate_dt(m1, 3, 1.0, [lam])
    assert dt3 == pytest.approx(dt1 * 3.0 / 7.0, rel=1e-15)


def test_estimate_dt_rejects_bad_input():
    m = mesh.build_mesh(1, 1, ((0.0, 1.0), (0.0, 1.0)))
    with pytest.raises(ConfigurationError):
        timestep.estimate_dt(m, 1, 0.0, [1.0])
    with pytest.raises(NumericalError):
        timestep.estimate_dt(m, 1, 1.0, [np.nan])
    with pytest.raises(NumericalError):
        timestep.estimate_dt(m, 1, 1.0, [0.0])
