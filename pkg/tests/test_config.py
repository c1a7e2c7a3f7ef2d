"""Configuration layering, validation, and hashing."""

import pytest

from moistdg import cases
from moistdg.config import (
    config_hash,
    config_to_string,
    constants_from_config,
    getbool,
    getfloat,
    getint,
    load_config,
    params_from_config,
    parse_overrides,
    validate_config,
)
from moistdg.errors import ConfigurationError
from moistdg.microphysics import DEFAULT_PARAMS
from moistdg.thermo import DEFAULT_CONSTANTS

PRESETS = {
    "gravity-wave": "configs/gravity-wave.ini",
    "gravity-wave-nocloud": "configs/gravity-wave-nocloud.ini",
    "bryan-fritsch": "configs/bryan-fritsch.ini",
    "at-rest": "configs/at-rest.ini",
    "rain-thermal": "configs/rain-thermal.ini",
}


def test_parse_overrides():
    ov = parse_overrides(["mesh.nx=40", "case.name = at-rest "])
    assert ov == {("mesh", "nx"): "40", ("case", "name"): "at-rest"}
    for bad in ["mesh.nx", "nx=40", ".nx=40", "mesh.=40"]:
        with pytest.raises(ConfigurationError):
            parse_overrides([bad])


def test_layering_precedence(tmp_path):
    """The file overrides the case defaults; --set overrides the file."""
    path = tmp_path / "run.ini"
    path.write_text("[case]\nname = gravity-wave\n[mesh]\nnx = 77\nnz = 5\n")
    cfg = load_config(path)
    assert getint(cfg, "mesh", "nx") == 77, "file must override the default"
    assert getint(cfg, "mesh", "k") == 1, "untouched defaults must survive"
    cfg = load_config(path, overrides=["mesh.nx=11"])
    assert getint(cfg, "mesh", "nx") == 11, "--set must override the file"


def test_case_name_resolution(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[case]\nname = at-rest\n")
    assert load_config(path)["case"]["name"] == "at-rest"
    cfg = load_config(path, overrides=["case.name=rain-thermal"])
    assert cfg["case"]["name"] == "rain-thermal", \
        "an override must beat the file's case name"
    assert load_config(case_name="bryan-fritsch")["case"]["name"] \
        == "bryan-fritsch"
    with pytest.raises(ConfigurationError):
        load_config()
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini", case_name="at-rest")


def test_missing_and_malformed_keys():
    cfg = load_config(case_name="gravity-wave")
    assert getfloat(cfg, "time", "dt") == 1.0
    assert getbool(cfg, "mesh", "periodic_x") is True
    assert getint(cfg, "mesh", "nowhere", fallback=3) == 3
    with pytest.raises(ConfigurationError):
        getint(cfg, "mesh", "nowhere")
    with pytest.raises(ConfigurationError):
        getfloat(cfg, "nonsection", "x0")
    cfg.set("mesh", "nx", "many")
    with pytest.raises(ConfigurationError):
        getint(cfg, "mesh", "nx")


@pytest.mark.parametrize("key,value", [
    ("mesh.nx", "0"),
    ("mesh.k", "9"),
    ("mesh.x1", "-1.0"),
    ("time.dt", "0.0"),
    ("time.t_end", "-5.0"),
    ("time.t_end", "3600.5"),
    ("time.snapshot_interval", "0"),
    ("time.diagnostics_interval", "0"),
    ("physics.viscosity_gamma", "-0.1"),
    ("physics.sip_penalty_mode", "volume"),
    ("physics.backend", "gpu"),
    ("output.snapshot_format", "hdf5"),
    ("sponge.enabled", "maybe"),
    ("constants.R_dry", "300"),
    ("microphysics.ntol", "1"),
])
def test_validation_rejects(key, value):
    with pytest.raises(ConfigurationError):
        load_config(case_name="gravity-wave", overrides=[f"{key}={value}"])


def test_sponge_validation():
    ov = ["sponge.enabled=yes", "sponge.z_bottom=9e3", "sponge.alpha=0.5"]
    validate_config(load_config(case_name="gravity-wave", overrides=ov))
    with pytest.raises(ConfigurationError):
        load_config(case_name="gravity-wave",
                    overrides=ov[:1] + ["sponge.z_bottom=11e3",
                                        "sponge.alpha=0.5"])
    with pytest.raises(ConfigurationError):
        load_config(case_name="gravity-wave",
                    overrides=ov[:2] + ["sponge.alpha=1.5"])


def test_constants_and_params_from_config():
    cfg = load_config(case_name="rain-thermal",
                      overrides=["constants.R_d=290.0",
                                 "microphysics.q_au=1e-3",
                                 "microphysics.newton_max_iter=40",
                                 "microphysics.rho_w_mode=liquid_constant"])
    const = constants_from_config(cfg)
    assert const.R_d == 290.0
    assert const.R_v == DEFAULT_CONSTANTS.R_v, "untouched constants survive"
    par = params_from_config(cfg)
    assert par.q_au == 1e-3
    assert par.newton_max_iter == 40
    assert par.rho_w_mode == "liquid_constant"
    assert par.N0r == DEFAULT_PARAMS.N0r


def test_defaults_without_override_sections():
    cfg = load_config(case_name="gravity-wave")
    assert constants_from_config(cfg) is DEFAULT_CONSTANTS
    assert params_from_config(cfg) is DEFAULT_PARAMS


def test_config_hash_ignores_output_only():
    base = load_config(case_name="gravity-wave")
    moved = load_config(case_name="gravity-wave",
                        overrides=["output.directory=/elsewhere",
                                   "output.snapshot_format=binary"])
    assert config_hash(base) == config_hash(moved), \
        "[output] must not contribute to the fingerprint"
    changed = load_config(case_name="gravity-wave",
                          overrides=["physics.sip_sigma=6.0"])
    assert config_hash(base) != config_hash(changed)
    assert "output." in config_to_string(base)
    assert "output." not in config_to_string(base, include_output=False)


def test_presets_match_registry_defaults():
    """The shipped preset files restate (not contradict) the case defaults."""
    for name, path in PRESETS.items():
        cfg = load_config(path)
        ref = load_config(case_name=name)
        assert config_to_string(cfg) == config_to_string(ref), \
            f"preset {path} drifted from the {name} registry defaults"


def test_literal_stratification_preset_differs():
    cfg = load_config("configs/gravity-wave-literal.ini")
    assert getfloat(cfg, "case", "n_sq") == 1e-1
    base = load_config(case_name="gravity-wave")
    assert config_hash(cfg) != config_hash(base)


def test_convergence_preset_carries_study_section():
    cfg = load_config("configs/convergence-gravity-wave.ini")
    assert cfg.has_section("convergence")
    assert getint(cfg, "convergence", "reference_nx") == 1200
    assert getfloat(cfg, "convergence", "reference_dt") == 0.1
