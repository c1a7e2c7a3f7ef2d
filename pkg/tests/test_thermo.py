"""Unit tests for the moist thermodynamics module.

Reference values marked with their provenance:
 - closed-form identities are asserted directly,
 - numeric spot values were generated with a 50-digit mpmath
   transcription of the same formulas and frozen here.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moistdg import thermo
from moistdg.errors import ConfigurationError, DomainError
from moistdg.thermo import DEFAULT_CONSTANTS as C


def test_constants_tabulated_values():
    assert C.c_l == 4218.0
    assert C.c_pd == 1005.0
    assert C.c_pv == 1850.0
    assert C.c_vd == 718.0
    assert C.c_vv == 1390.0
    assert C.e_ref == 610.7
    assert C.L_ref == 2.835e6
    assert C.R_d == 287.05
    assert C.R_v == 461.51
    assert C.T_ref == 273.15
    assert C.p_ref == 1.0e5
    assert C.epsilon == 0.622
    assert C.g == 9.81


def test_constants_internal_consistency():
    # the tabulated heats satisfy Mayer's relation only approximately
    # (dry air to ~0.02%, vapour to ~0.33%)
    assert C.c_pd - C.c_vd == pytest.approx(C.R_d, rel=1e-3)
    assert C.c_pv - C.c_vv == pytest.approx(C.R_v, rel=5e-3)
    # tabulated epsilon vs the ratio of gas constants
    assert C.epsilon == pytest.approx(C.R_d / C.R_v, rel=1e-3)


def test_constants_override_validation():
    with pytest.raises(ConfigurationError):
        thermo.ThermoConstants(R_d=-1.0)
    with pytest.raises(ConfigurationError):
        C.with_overrides(epsilon=0.9)  # inconsistent with R_d/R_v
    c2 = C.with_overrides(g=9.80665)
    assert c2.g == 9.80665 and c2.R_d == C.R_d


def test_saturation_pressure_at_reference_point():
    # the exponent vanishes at T_ref, so e_s(T_ref) is exactly e_ref
    assert thermo.saturation_vapour_pressure(273.15) == 610.7


def test_saturation_pressure_spot_values():
    # frozen from the 50-digit evaluation
    for T, ref in [(260.0, 194.57748575139957),
                   (280.0, 1057.0348524985163),
                   (300.0, 4471.6334449839273),
                   (320.0, 15461.593815362149)]:
        got = thermo.saturation_vapour_pressure(T)
        assert got == pytest.approx(ref, rel=1e-14), f"e_s({T})={got} vs {ref}"


def test_saturation_pressure_derivative_spot_value():
    got = thermo.saturation_vapour_pressure_derivative(300.0)
    assert got == pytest.approx(298.36288090039218, rel=1e-14)


def test_saturation_pressure_derivative_matches_finite_difference():
    for T in (250.0, 280.0, 310.0):
        h = 1e-4
        fd = (thermo.saturation_vapour_pressure(T + h)
              - thermo.saturation_vapour_pressure(T - h)) / (2 * h)
        an = thermo.saturation_vapour_pressure_derivative(T)
        assert an == pytest.approx(fd, rel=1e-7)


def test_saturation_vapour_density_spot_value():
    got = thermo.saturation_vapour_density(300.0)
    assert got == pytest.approx(0.032297122091857361, rel=1e-14)


def test_pressure_and_internal_energy_spot_values():
    rho_d, rho_v, rho_c, rho_r, T = 1.1, 0.01, 0.002, 0.0005, 290.0
    assert thermo.pressure(rho_d, rho_v, T) == pytest.approx(92907.329, rel=1e-14)
    assert thermo.internal_energy(rho_d, rho_v, rho_c, rho_r, T) == \
        pytest.approx(40809.413685, rel=1e-13)


def test_temperature_inversion_round_trip():
    rng = np.random.default_rng(7)
    n = 200
    rho_d = rng.uniform(0.3, 1.3, n)
    rho_v = rng.uniform(0.0, 0.03, n)
    rho_c = rng.uniform(0.0, 0.005, n)
    rho_r = rng.uniform(0.0, 0.005, n)
    T = rng.uniform(200.0, 330.0, n)
    rho_e = thermo.internal_energy(rho_d, rho_v, rho_c, rho_r, T)
    T_back = thermo.temperature_from_internal_energy(rho_d, rho_v, rho_c,
                                                     rho_r, rho_e)
    assert np.allclose(T_back, T, rtol=1e-13, atol=0.0)


def test_temperature_inversion_rejects_degenerate_state():
    with pytest.raises(DomainError):
        thermo.temperature_from_internal_energy(0.0, 0.0, 0.0, 0.0, 1e4)


def test_saturation_mixing_ratio_spot_value():
    got = thermo.saturation_mixing_ratio(9.0e4, 290.0)
    assert got == pytest.approx(0.01584435815269611, rel=1e-14)


def test_saturation_mixing_ratio_rejects_low_pressure():
    # e_s(320) ~ 15.5 kPa exceeds the total pressure here
    with pytest.raises(DomainError):
        thermo.saturation_mixing_ratio(1.0e4, 320.0)


def test_moist_gamma_and_sound_speed_spot_values():
    rho_d, rho_v, rho_c, rho_r, T = 1.1, 0.01, 0.002, 0.0005, 290.0
    p = thermo.pressure(rho_d, rho_v, T)
    gam = thermo.moist_gamma(rho_d, rho_v, rho_c, rho_r)
    assert gam == pytest.approx(1.3934566377441679, rel=1e-14)
    c = thermo.moist_sound_speed(p, rho_d, rho_v, rho_c, rho_r)
    assert c == pytest.approx(341.13140805877564, rel=1e-14)


def test_moist_gamma_dry_limit():
    # with no water the mixture gamma collapses to (c_vd + R_d)/c_vd
    gam = thermo.moist_gamma(1.2, 0.0, 0.0, 0.0)
    assert gam == pytest.approx((C.c_vd + C.R_d) / C.c_vd, rel=1e-15)


def test_sound_speed_rejects_nonphysical_input():
    with pytest.raises(DomainError):
        thermo.moist_sound_speed(-1.0, 1.2, 0.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        thermo.moist_sound_speed(1e5, 0.0, 0.0, 0.0, 0.0)


def test_wet_equivalent_potential_temperature_spot_value():
    # q_w here is the total-water mixing ratio entering the effective
    # heat capacity; rho_v the vapour content in the exponential
    got = thermo.wet_equivalent_potential_temperature(
        1.05, 0.012, 295.0, 0.015)
    assert got == pytest.approx(336.79834738547043, rel=1e-13)


def test_density_potential_temperature_spot_value():
    p = thermo.pressure(1.05, 0.012, 295.0)
    got = thermo.density_potential_temperature(p, 295.0, 0.012 / 1.05)
    assert got == pytest.approx(309.0625114380158, rel=1e-13)


def test_density_potential_temperature_dry_reduces_to_theta():
    T, p = 280.0, 8.0e4
    theta = T * (C.p_ref / p) ** (C.R_d / C.c_pd)
    assert thermo.density_potential_temperature(p, T, 0.0) == \
        pytest.approx(theta, rel=1e-15)


@given(T=st.floats(min_value=180.0, max_value=350.0))
@settings(max_examples=200, deadline=None)
def test_saturation_pressure_monotone_increasing(T):
    dT = 1e-3
    assert thermo.saturation_vapour_pressure(T + dT) > \
        thermo.saturation_vapour_pressure(T)


@given(rho_d=st.floats(min_value=0.1, max_value=1.5),
       rho_v=st.floats(min_value=0.0, max_value=0.05),
       T=st.floats(min_value=200.0, max_value=330.0))
@settings(max_examples=200, deadline=None)
def test_pressure_positive_and_linear_in_temperature(rho_d, rho_v, T):
    p = thermo.pressure(rho_d, rho_v, T)
    assert p > 0
    assert thermo.pressure(rho_d, rho_v, 2 * T) == pytest.approx(2 * p, rel=1e-15)


def test_vectorized_entry_points_match_scalar():
    T = np.array([260.0, 280.0, 300.0])
    es_vec = thermo.saturation_vapour_pressure(T)
    assert es_vec.shape == (3,)
    for i, t in enumerate(T):
        assert es_vec[i] == thermo.saturation_vapour_pressure(float(t))
