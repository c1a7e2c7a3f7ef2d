"""Tests for Kessler-type warm-rain sources and saturation recovery.

Numeric spot values were frozen from a 50-digit mpmath evaluation of the
same closed-form expressions.  The recovery is additionally checked
against a slow, independent bisection oracle written out longhand below.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moistdg import microphysics, thermo
from moistdg.errors import ConfigurationError, DomainError, RecoveryError
from moistdg.microphysics import DEFAULT_PARAMS
from moistdg.thermo import DEFAULT_CONSTANTS as C


# ---------------------------------------------------------------------------
# source terms


def test_evaporation_spot_value():
    got = microphysics.source_evaporation(285.0, 8.0e-4, 0.010547, 0.009)
    assert got == pytest.approx(4.0714093974813516e-7, rel=1e-14)


def test_evaporation_clamped_when_supersaturated():
    # rho_v above saturation would give a negative rate; it must clamp to 0
    assert microphysics.source_evaporation(285.0, 8.0e-4, 0.0105, 0.012) == 0.0


def test_evaporation_zero_without_rain():
    assert microphysics.source_evaporation(285.0, 0.0, 0.0105, 0.009) == 0.0


def test_evaporation_negative_rain_density_is_safe():
    # transient undershoots must not feed fractional powers
    got = microphysics.source_evaporation(285.0, -1e-12, 0.0105, 0.009)
    assert got == 0.0 and math.isfinite(got)


def test_autoconversion_spot_value():
    got = microphysics.source_autoconversion(0.0021, 1.12)
    assert got == pytest.approx(2.1e-6, rel=1e-14)


def test_autoconversion_threshold():
    params = DEFAULT_PARAMS.with_overrides(q_au=0.01)
    # rho_c below q_au * rho -> no conversion
    assert microphysics.source_autoconversion(0.005, 1.0, params) == 0.0
    got = microphysics.source_autoconversion(0.015, 1.0, params)
    assert got == pytest.approx(0.001 * 0.005, rel=1e-14)


def test_accretion_spot_value():
    got = microphysics.source_accretion(0.0021, 8.0e-4)
    assert got == pytest.approx(7.0461434446928054e-6, rel=1e-14)


def test_accretion_clamps_negative_inputs():
    assert microphysics.source_accretion(-1e-12, 8.0e-4) == 0.0
    assert microphysics.source_accretion(0.0021, -1e-12) == 0.0


# ---------------------------------------------------------------------------
# terminal velocity


def test_terminal_velocity_spot_value():
    got = microphysics.terminal_rain_velocity(0.009, 0.0021, 8.0e-4)
    assert got == pytest.approx(21.372201022959546, rel=1e-14)


def test_terminal_velocity_vanishes_without_rain():
    assert microphysics.terminal_rain_velocity(0.01, 0.002, 0.0) == 0.0
    assert microphysics.terminal_rain_velocity(0.0, 0.0, 0.0) == 0.0


def test_terminal_velocity_prefactor():
    pref = DEFAULT_PARAMS.vr_prefactor
    ref = 130.0 * math.gamma(4.5) / 6.0 * (math.pi * 8.0e6) ** -0.125
    assert pref == pytest.approx(ref, rel=1e-15)


def test_terminal_velocity_liquid_constant_mode():
    params = DEFAULT_PARAMS.with_overrides(rho_w_mode="liquid_constant")
    got = microphysics.terminal_rain_velocity(0.009, 0.0021, 8.0e-4, params)
    ref = params.vr_prefactor * (8.0e-4 / 1000.0) ** 0.125
    assert got == pytest.approx(ref, rel=1e-14)


def test_params_validation():
    with pytest.raises(ConfigurationError):
        microphysics.MicrophysicsParams(N0r=-1.0)
    with pytest.raises(ConfigurationError):
        microphysics.MicrophysicsParams(rho_w_mode="bogus")


# ---------------------------------------------------------------------------
# condensation recovery


def _bisection_oracle(rho_d, rho_m, rho_r, rho_e, lo=150.0, hi=400.0,
                      iters=200):
    """Independent recovery: longhand residual + plain bisection."""
    a = (C.c_pv - C.c_l) / C.R_v
    b = (C.L_ref - (C.c_pv - C.c_l) * C.T_ref) / C.R_v
    L_star = C.L_ref - C.R_v * C.T_ref

    def residual(T):
        es = C.e_ref * math.exp(a * math.log(T / C.T_ref)
                                + b * (1.0 / C.T_ref - 1.0 / T))
        rho_vs = es / (C.R_v * T)
        rho_v = min(rho_vs, rho_m)
        rho_c = rho_m - rho_v
        e = ((C.c_vd * rho_d + C.c_vv * rho_v + C.c_l * (rho_c + rho_r))
             * (T - C.T_ref) + rho_v * L_star)
        return e - rho_e

    flo, fhi = residual(lo), residual(hi)
    assert flo < 0.0 < fhi, "oracle bracket failed"
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if residual(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_recovery_unsaturated_round_trip():
    rho_d, rho_v, rho_r, T = 1.15, 0.004, 0.0, 300.0
    assert rho_v < thermo.saturation_vapour_density(T)
    rho_e = thermo.internal_energy(rho_d, rho_v, 0.0, rho_r, T)
    st_ = microphysics.condensation_recover(rho_d, rho_v, rho_r, rho_e, 280.0)
    assert not st_.saturated
    assert st_.rho_c == 0.0
    assert st_.rho_v == rho_v
    assert st_.T == pytest.approx(T, abs=1e-10)


def test_recovery_saturated_round_trip():
    T = 287.0
    rho_d, rho_r = 1.08, 2.0e-4
    rho_v = thermo.saturation_vapour_density(T)
    rho_c = 1.3e-3
    rho_m = rho_v + rho_c
    rho_e = thermo.internal_energy(rho_d, rho_v, rho_c, rho_r, T)
    st_ = microphysics.condensation_recover(rho_d, rho_m, rho_r, rho_e, 275.0)
    assert st_.saturated
    assert st_.T == pytest.approx(T, abs=1e-9)
    assert st_.rho_v == pytest.approx(rho_v, rel=1e-12)
    assert st_.rho_v + st_.rho_c == rho_m  # exact, not approximate


def test_recovery_matches_bisection_oracle():
    rng = np.random.default_rng(42)
    for _ in range(50):
        T = rng.uniform(240.0, 320.0)
        rho_d = rng.uniform(0.4, 1.3)
        rho_r = rng.uniform(0.0, 2e-3)
        rho_vs = thermo.saturation_vapour_density(T)
        if rng.random() < 0.5:
            rho_m = rng.uniform(0.1, 0.9) * rho_vs       # unsaturated
        else:
            rho_m = rho_vs + rng.uniform(0.0, 3e-3)      # cloudy
        rho_e = thermo.internal_energy(
            rho_d, min(rho_m, rho_vs), max(rho_m - rho_vs, 0.0), rho_r, T)
        st_ = microphysics.condensation_recover(rho_d, rho_m, rho_r, rho_e,
                                                T + rng.uniform(-20, 20))
        T_oracle = _bisection_oracle(rho_d, rho_m, rho_r, rho_e)
        assert st_.T == pytest.approx(T_oracle, abs=1e-9), \
            f"newton {st_.T} vs bisection {T_oracle}"
        assert st_.iterations <= 10


def test_recovery_energy_consistency():
    rng = np.random.default_rng(3)
    for _ in range(100):
        T = rng.uniform(235.0, 320.0)
        rho_d = rng.uniform(0.4, 1.3)
        rho_r = rng.uniform(0.0, 2e-3)
        rho_m = rng.uniform(0.2, 1.6) * thermo.saturation_vapour_density(T)
        rho_e = thermo.internal_energy(
            rho_d,
            min(rho_m, thermo.saturation_vapour_density(T)),
            max(rho_m - thermo.saturation_vapour_density(T), 0.0),
            rho_r, T)
        st_ = microphysics.condensation_recover(rho_d, rho_m, rho_r, rho_e, 280.0)
        back = thermo.internal_energy(rho_d, st_.rho_v, st_.rho_c, rho_r, st_.T)
        assert back == pytest.approx(rho_e, rel=1e-11), \
            f"energy mismatch at T={T}: {back} vs {rho_e}"


@given(T=st.floats(min_value=235.0, max_value=320.0),
       rho_d=st.floats(min_value=0.3, max_value=1.4),
       excess=st.floats(min_value=0.0, max_value=4e-3),
       rho_r=st.floats(min_value=0.0, max_value=3e-3))
@settings(max_examples=200, deadline=None)
def test_recovery_saturated_invariants(T, rho_d, excess, rho_r):
    rho_vs = thermo.saturation_vapour_density(T)
    rho_m = rho_vs + excess
    rho_e = thermo.internal_energy(rho_d, rho_vs, excess, rho_r, T)
    st_ = microphysics.condensation_recover(rho_d, rho_m, rho_r, rho_e, 280.0)
    # water partition is an exact complement
    assert st_.rho_v + st_.rho_c == rho_m
    assert st_.rho_c >= 0.0
    if st_.saturated and st_.rho_c > 1e-10:
        # vapour sits on the saturation curve of the recovered temperature
        rho_vs_rec = thermo.saturation_vapour_density(st_.T)
        assert st_.rho_v == pytest.approx(rho_vs_rec, rel=1e-12)


def test_recovery_batch_matches_scalar():
    rng = np.random.default_rng(11)
    n = 300
    T = rng.uniform(240.0, 320.0, n)
    rho_d = rng.uniform(0.4, 1.3, n)
    rho_r = rng.uniform(0.0, 2e-3, n)
    rho_vs = thermo.saturation_vapour_density(T)
    rho_m = rng.uniform(0.2, 1.6, n) * rho_vs
    rho_v0 = np.minimum(rho_m, rho_vs)
    rho_e = thermo.internal_energy(rho_d, rho_v0, rho_m - rho_v0, rho_r, T)
    guess = np.full(n, 280.0)
    bv, bc, bT, bit, bsat = microphysics.condensation_recover_batch(
        rho_d, rho_m, rho_r, rho_e, guess)
    for i in range(n):
        s = microphysics.condensation_recover(rho_d[i], rho_m[i], rho_r[i],
                                              rho_e[i], 280.0)
        assert bT[i] == pytest.approx(s.T, abs=1e-11)
        assert bv[i] == pytest.approx(s.rho_v, rel=1e-11, abs=1e-16)
        assert bc[i] == pytest.approx(s.rho_c, rel=1e-11, abs=1e-16)
        assert bool(bsat[i]) == s.saturated
    # exact complement holds in the batch path too
    assert np.all(bv + bc == rho_m)


def test_recovery_rejects_nonphysical_input():
    # energy so low no admissible temperature matches -> solver failure
    with pytest.raises(RecoveryError):
        microphysics.condensation_recover(1.0, 0.01, 0.0, -1.0e9, 280.0)
    # negative dry density is a domain violation
    with pytest.raises(DomainError):
        microphysics.condensation_recover(-1.0, 0.01, 0.0, 4.0e4, 280.0)


def test_recovery_cold_start_far_guess():
    # a wild initial guess must still converge via the bracket safeguards
    T = 298.0
    rho_d = 1.1
    rho_vs = thermo.saturation_vapour_density(T)
    rho_m = rho_vs + 2e-3
    rho_e = thermo.internal_energy(rho_d, rho_vs, 2e-3, 0.0, T)
    for guess in (151.0, 399.0, 273.15):
        st_ = microphysics.condensation_recover(rho_d, rho_m, 0.0, rho_e, guess)
        assert st_.T == pytest.approx(T, abs=1e-9)
