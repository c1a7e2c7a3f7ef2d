"""Run configuration: INI files merged over case defaults.

A run is described by a flat ``key = value`` file with one section per
concern (``[case]``, ``[mesh]``, ``[time]``, ``[physics]``, ``[sponge]``,
``[output]``, plus optional ``[constants]`` and ``[microphysics]``
override sections and a ``[convergence]`` section for studies).  The
effective configuration is built in three layers, later layers winning:

    case registry defaults  <-  configuration file  <-  --set overrides

so a preset file only needs to state what differs from the case defaults,
and the command line only what differs from the file.

``[constants]`` keys are the thermodynamic symbol names (``R_d``,
``c_pv``, ``g``, ...); ``[microphysics]`` keys the Kessler/Newton
parameter names (``q_au``, ``v0r``, ``newton_tol``, ...).  Unknown keys
in either section are configuration errors rather than silent typos.

``config_hash`` fingerprints every section except ``[output]`` (where a
run writes must not affect whether a restart file matches it).
"""

import configparser
import dataclasses
import hashlib

from .basis import MAX_ORDER
from .cases import get_case
from .errors import ConfigurationError
from .microphysics import DEFAULT_PARAMS, MicrophysicsParams
from .thermo import DEFAULT_CONSTANTS, ThermoConstants

__all__ = [
    "load_config",
    "parse_overrides",
    "constants_from_config",
    "params_from_config",
    "config_hash",
    "config_to_string",
    "validate_config",
]

SNAPSHOT_FORMATS = ("ascii", "binary", "none")
BACKENDS = ("auto", "compiled", "fallback")
SIP_MODES = ("k2_over_h", "h2_over_k")


def parse_overrides(pairs):
    """Parse ``section.key=value`` strings into a {(section, key): value} map."""
    out = {}
    for raw in pairs:
        key, sep, value = raw.partition("=")
        if not sep:
            raise ConfigurationError(
                f"override {raw!r} is not of the form section.key=value")
        section, dot, option = key.strip().partition(".")
        if not dot or not section or not option:
            raise ConfigurationError(
                f"override key {key.strip()!r} must be section.key")
        out[(section, option.strip())] = value.strip()
    return out


def _parser():
    # preserve option case: [constants]/[microphysics] keys are symbol
    # names like R_d and N0r that must survive the round trip
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str
    return p


def _read_file(parser, path):
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") \
            from None
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config file {path}: {exc}") \
            from None


def load_config(path=None, case_name=None, overrides=()):
    """Build the effective configuration for one run.

    ``overrides`` is an iterable of ``section.key=value`` strings (the
    ``--set`` arguments).  The case is named by, in order of precedence,
    an override of ``case.name``, the file's ``[case] name``, or the
    ``case_name`` argument.
    """
    ov = overrides if isinstance(overrides, dict) else \
        parse_overrides(overrides)
    name = ov.get(("case", "name"))
    if name is None and path is not None:
        peek = _parser()
        _read_file(peek, path)
        if peek.has_option("case", "name"):
            name = peek["case"]["name"]
    if name is None:
        name = case_name
    if name is None:
        raise ConfigurationError(
            "no case selected: set [case] name in the file or pass --set "
            "case.name=...")
    case = get_case(name)

    cfg = _parser()
    cfg.read_dict(case.defaults)
    if path is not None:
        _read_file(cfg, path)
    for (section, option), value in ov.items():
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option, value)
    validate_config(cfg)
    return cfg


def _checked(cfg, conv, section, option, fallback):
    """Converted read where a missing key (without fallback) is an error."""
    try:
        sec = cfg[section]
    except KeyError:
        raise ConfigurationError(
            f"missing config section [{section}]") from None
    try:
        value = getattr(sec, "get" + conv)(option, fallback=fallback)
    except ValueError as exc:
        raise ConfigurationError(
            f"bad value for [{section}] {option}: {exc}") from None
    if value is None:
        raise ConfigurationError(
            f"missing config key [{section}] {option}")
    return value


def getfloat(cfg, section, option, fallback=None):
    return _checked(cfg, "float", section, option, fallback)


def getint(cfg, section, option, fallback=None):
    return _checked(cfg, "int", section, option, fallback)


def getbool(cfg, section, option, fallback=None):
    return _checked(cfg, "boolean", section, option, fallback)


def validate_config(cfg):
    """Check the cross-field invariants a run relies on."""
    nx = getint(cfg, "mesh", "nx")
    nz = getint(cfg, "mesh", "nz")
    k = getint(cfg, "mesh", "k")
    if nx < 1 or nz < 1:
        raise ConfigurationError(f"mesh counts nx={nx}, nz={nz} must be >= 1")
    if not 0 <= k <= MAX_ORDER:
        raise ConfigurationError(f"order k={k} outside 0..{MAX_ORDER}")
    x0, x1 = getfloat(cfg, "mesh", "x0"), getfloat(cfg, "mesh", "x1")
    z0, z1 = getfloat(cfg, "mesh", "z0"), getfloat(cfg, "mesh", "z1")
    if not (x1 > x0 and z1 > z0):
        raise ConfigurationError("mesh extents must satisfy x1 > x0, z1 > z0")

    dt = getfloat(cfg, "time", "dt")
    t_end = getfloat(cfg, "time", "t_end")
    if not dt > 0.0:
        raise ConfigurationError(f"dt = {dt} must be positive")
    if t_end < 0.0:
        raise ConfigurationError(f"t_end = {t_end} must be >= 0")
    steps = round(t_end / dt)
    if abs(steps * dt - t_end) > 1e-6 * dt:
        raise ConfigurationError(
            f"t_end = {t_end} is not a whole number of steps of dt = {dt}")
    if getfloat(cfg, "time", "snapshot_interval") <= 0.0:
        raise ConfigurationError("snapshot_interval must be positive")
    if getint(cfg, "time", "diagnostics_interval") < 1:
        raise ConfigurationError("diagnostics_interval must be >= 1")
    if getint(cfg, "time", "report_interval", 200) < 1:
        raise ConfigurationError("report_interval must be >= 1")

    gamma = getfloat(cfg, "physics", "viscosity_gamma")
    if gamma < 0.0:
        raise ConfigurationError("viscosity_gamma must be >= 0")
    if getfloat(cfg, "physics", "sip_sigma") < 0.0:
        raise ConfigurationError("sip_sigma must be >= 0")
    mode = cfg["physics"].get("sip_penalty_mode", "k2_over_h")
    if mode not in SIP_MODES:
        raise ConfigurationError(f"unknown sip_penalty_mode {mode!r}")
    backend = cfg["physics"].get("backend", "auto")
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend {backend!r}")

    if getbool(cfg, "sponge", "enabled", False):
        z_bottom = getfloat(cfg, "sponge", "z_bottom")
        alpha = getfloat(cfg, "sponge", "alpha")
        if not z_bottom < z1:
            raise ConfigurationError(
                f"sponge bottom {z_bottom} must lie below the domain top {z1}")
        if not 0.0 <= alpha <= 1.0:
            raise ConfigurationError("sponge alpha must be in [0, 1]")

    fmt = cfg["output"].get("snapshot_format", "ascii")
    if fmt not in SNAPSHOT_FORMATS:
        raise ConfigurationError(
            f"snapshot_format must be one of {SNAPSHOT_FORMATS}, got {fmt!r}")
    constants_from_config(cfg)
    params_from_config(cfg)


def constants_from_config(cfg) -> ThermoConstants:
    """Thermodynamic constants with the [constants] overrides applied."""
    if not cfg.has_section("constants"):
        return DEFAULT_CONSTANTS
    known = {f.name for f in dataclasses.fields(ThermoConstants)}
    kw = {}
    for key in cfg["constants"]:
        if key not in known:
            raise ConfigurationError(
                f"unknown thermodynamic constant {key!r} in [constants]")
        kw[key] = getfloat(cfg, "constants", key)
    return DEFAULT_CONSTANTS.with_overrides(**kw)


def params_from_config(cfg) -> MicrophysicsParams:
    """Microphysics/recovery parameters with [microphysics] overrides."""
    if not cfg.has_section("microphysics"):
        return DEFAULT_PARAMS
    fields = {f.name: f.type for f in
              dataclasses.fields(MicrophysicsParams)}
    kw = {}
    for key in cfg["microphysics"]:
        if key not in fields:
            raise ConfigurationError(
                f"unknown microphysics parameter {key!r} in [microphysics]")
        if key == "rho_w_mode":
            kw[key] = cfg["microphysics"][key]
        elif key == "newton_max_iter":
            kw[key] = getint(cfg, "microphysics", key)
        else:
            kw[key] = getfloat(cfg, "microphysics", key)
    return MicrophysicsParams(**{**dataclasses.asdict(DEFAULT_PARAMS), **kw})


def config_to_string(cfg, include_output=True):
    """Canonical text form: sorted sections and keys, one pair per line."""
    lines = []
    for section in sorted(cfg.sections()):
        if not include_output and section == "output":
            continue
        for key in sorted(cfg[section]):
            lines.append(f"{section}.{key}={cfg[section][key]}")
    return "\n".join(lines)


def config_hash(cfg) -> str:
    """Fingerprint of everything that affects the computed numbers."""
    text = config_to_string(cfg, include_output=False)
    return hashlib.sha256(text.encode()).hexdigest()
