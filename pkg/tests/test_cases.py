"""Case registry: defaults are complete and builders wire up correctly."""

import configparser

import numpy as np
import pytest

from moistdg import cases
from moistdg.errors import ConfigurationError, ProfileError


def _config_for(name):
    cfg = configparser.ConfigParser()
    cfg.read_dict(cases.get_case(name).defaults)
    return cfg


def test_registry_lists_all_cases():
    names = cases.case_names()
    assert names == sorted(names)
    assert set(names) == {"gravity-wave", "gravity-wave-nocloud",
                          "bryan-fritsch", "at-rest", "rain-thermal"}
    with pytest.raises(ConfigurationError):
        cases.get_case("no-such-case")


@pytest.mark.parametrize("name,micro,has_ic", [
    ("gravity-wave", False, True),
    ("gravity-wave-nocloud", False, True),
    ("bryan-fritsch", False, True),
    ("at-rest", True, False),
    ("rain-thermal", True, True),
])
def test_case_builds_from_defaults(name, micro, has_ic):
    cfg = _config_for(name)
    case = cases.get_case(name)
    setup = case.build(cfg)
    assert setup.microphysics_enabled == micro
    assert (setup.initial_condition is not None) == has_ic
    z1 = cfg["mesh"].getfloat("z1")
    assert setup.profile.z_top >= z1, "profile must cover the domain"
    p0 = setup.profile.evaluate(0.0).p
    assert p0 == cfg["case"].getfloat("p_surface"), \
        f"{name}: surface pressure {p0}"
    if has_ic:
        x = np.array([0.25, 0.5, 0.75]) * cfg["mesh"].getfloat("x1")
        z = np.array([0.25, 0.5, 0.75]) * z1
        U = np.asarray(setup.initial_condition(x, z))
        assert U.shape == (6, 3), f"{name}: initial condition shape {U.shape}"
        assert np.all(np.isfinite(U))


def test_time_settings_cover_interval_in_whole_steps():
    for name in cases.case_names():
        cfg = _config_for(name)
        t_end = cfg["time"].getfloat("t_end")
        dt = cfg["time"].getfloat("dt")
        steps = round(t_end / dt)
        assert abs(steps * dt - t_end) < dt, \
            f"{name}: dt {dt} does not tile t_end {t_end}"


def test_gravity_wave_literal_stratification_fails():
    cfg = _config_for("gravity-wave")
    cfg["case"]["n_sq"] = "1e-1"
    with pytest.raises(ProfileError):
        cases.get_case("gravity-wave").build(cfg)


def test_gravity_wave_rho_m_modes_differ():
    cfg = _config_for("gravity-wave")
    center = np.array([150e3]), np.array([5e3])
    U_qw = cases.get_case("gravity-wave").build(cfg).initial_condition(*center)
    cfg["case"]["rho_m_pert_mode"] = "printed"
    U_pr = cases.get_case("gravity-wave").build(cfg).initial_condition(*center)
    assert U_qw[1, 0] != U_pr[1, 0], "the two bookkeeping variants coincide"
    assert U_qw[0, 0] == U_pr[0, 0], "dry density is mode-independent"


def test_bryan_fritsch_ic_vanishes_outside_bubble():
    cfg = _config_for("bryan-fritsch")
    setup = cases.get_case("bryan-fritsch").build(cfg)
    U = np.asarray(setup.initial_condition(np.array([1.0e3, 19.0e3]),
                                           np.array([8.0e3, 9.0e3])))
    assert np.all(U == 0.0), "perturbation must be confined to the bubble"


def test_sponge_defaults_only_for_at_rest():
    for name in cases.case_names():
        cfg = _config_for(name)
        enabled = cfg["sponge"].getboolean("enabled")
        assert enabled == (name == "at-rest"), name
