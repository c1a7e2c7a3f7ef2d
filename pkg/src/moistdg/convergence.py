"""Convergence harness: cross-mesh space-time errors and rate tables.

The error between a run and a reference on a finer nested mesh is the
discrete l2-in-time, L2-in-space norm

    e = sqrt( sum_i || u_h(t_i) - u_ref(t_i) ||^2_{L2(Omega)} )

over the stored snapshot times t_i.  The integrand is evaluated at the
*coarse* run's volume quadrature points; the reference field is evaluated
there exactly (point evaluation of its modal expansion), so no
interpolation error pollutes the measured rates.

``convergence_study`` drives a set of runs described by a single
configuration file with a ``[convergence]`` section, reuses completed
runs via their configuration hash, and writes a CSV table of errors and
observed rates log2(e_2h / e_h).
"""

import configparser
from pathlib import Path

import numpy as np

from .assembly import eval_volume
from .basis import legendre_orthonormal
from .config import getfloat, getint, validate_config
from .driver import ensure_run
from .errors import ConfigurationError, OutputError
from .restart import load_modal

__all__ = ["evaluate_at_points", "space_time_l2_error", "load_run_snapshots",
           "convergence_study", "COMPONENT_NAMES"]

COMPONENT_NAMES = {"rho_d": 0, "rho_m": 1, "rho_r": 2,
                   "mom_x": 3, "mom_z": 4, "E": 5}
_CHUNK = 16384


def evaluate_at_points(disc, coef, x, z):
    """Point values of the modal field at physical ``(x, z)``.

    Returns ``(ncomp, n)`` for flattened inputs of length ``n``.  Points
    must lie inside the mesh extents; each is evaluated in the element
    that contains it (boundary ties go to the element on the right/top).
    """
    m = disc.mesh
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    c4 = disc._coef4(coef)
    k1 = disc.k + 1
    out = np.empty((disc.ncomp, x.size))
    x0, _ = m.x_extent
    z0, _ = m.z_extent
    for lo in range(0, x.size, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, x.size))
        i = np.clip((x[sl] - x0) // m.hx, 0, m.nx - 1).astype(np.int64)
        j = np.clip((z[sl] - z0) // m.hz, 0, m.nz - 1).astype(np.int64)
        xi = 2.0 * (x[sl] - x0 - i * m.hx) / m.hx - 1.0
        eta = 2.0 * (z[sl] - z0 - j * m.hz) / m.hz - 1.0
        Vx = legendre_orthonormal(disc.k, xi)[0]          # (k1, n)
        Vz = legendre_orthonormal(disc.k, eta)[0]
        ce = c4[j * m.nx + i]                             # (n, C, k1, k1)
        out[:, sl] = np.einsum("ncab,an,bn->cn", ce, Vx, Vz,
                               optimize=True)
    return out


def _fetch(entry):
    """A snapshot entry is (t, coefficients) or (t, file path)."""
    t, payload = entry
    if isinstance(payload, (str, Path)):
        coef, t_file = load_modal(payload)
        if abs(t_file - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigurationError(
                f"snapshot file {payload} stores t = {t_file}, manifest "
                f"says {t}")
        return t, coef
    return t, np.asarray(payload)


def space_time_l2_error(snaps, ref_snaps, disc, ref_disc, components=None):
    """Accumulated snapshot-wise L2 errors of ``snaps`` against a reference.

    ``snaps``/``ref_snaps`` are equal-length lists of ``(t, coef-or-path)``
    at matching times.  Returns an array over ``components`` (default: all
    six) of sqrt(sum-over-snapshots of squared L2 norms).
    """
    if len(snaps) != len(ref_snaps):
        raise ConfigurationError(
            f"snapshot counts differ: {len(snaps)} vs {len(ref_snaps)}")
    if not snaps:
        raise ConfigurationError("no snapshots to compare")
    comps = list(range(disc.ncomp)) if components is None \
        else list(components)
    m = disc.mesh
    w1 = disc.tables.rule.weights_1d
    wq = (w1[:, None] * w1[None, :]).reshape(-1) * m.jacobian
    xq, zq = disc.volume_points()
    xf, zf = xq.reshape(-1), zq.reshape(-1)

    wq_full = np.tile(wq, m.n_elements)
    err2 = np.zeros(len(comps))
    for entry, ref_entry in zip(snaps, ref_snaps):
        t_a, coef = _fetch(entry)
        t_b, ref_coef = _fetch(ref_entry)
        if abs(t_a - t_b) > 1e-9 * max(1.0, abs(t_a)):
            raise ConfigurationError(
                f"snapshot times do not match: {t_a} vs {t_b}")
        va = eval_volume(disc, coef)[:, comps]        # (E, c, nq, nq)
        vb = evaluate_at_points(ref_disc, ref_coef, xf, zf)[comps]
        diff = va.transpose(1, 0, 2, 3).reshape(len(comps), -1) - vb
        err2 += (diff * diff) @ wq_full
    return np.sqrt(err2)


def load_run_snapshots(outdir, skip_initial=True):
    """Modal snapshot list ``[(t, path)]`` from a run's manifest."""
    manifest = Path(outdir) / "snapshots.csv"
    try:
        lines = manifest.read_text().splitlines()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot manifest {manifest}: "
                          f"{exc}") from None
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        _index, _step, t, _vtk, modal = line.split(",")
        if not modal:
            raise ConfigurationError(
                f"run in {outdir} stored no modal dumps; enable "
                f"output.write_modal for convergence runs")
        t = float(t)
        if skip_initial and t == 0.0:
            continue
        out.append((t, Path(outdir) / modal))
    return out


# ---------------------------------------------------------------------------
# study orchestration


def _clone_config(cfg, drop=("convergence",)):
    out = configparser.ConfigParser(interpolation=None)
    out.optionxform = str
    out.read_dict({s: dict(cfg[s]) for s in cfg.sections()
                   if s not in drop})
    return out


def _floats(text):
    return [float(tok) for tok in text.replace(",", " ").split()]


def _ints(text):
    return [int(tok) for tok in text.replace(",", " ").split()]


def _study_plan(cfg):
    """Expand the [convergence] section into run descriptions."""
    if not cfg.has_section("convergence"):
        raise ConfigurationError("config has no [convergence] section")
    sec = cfg["convergence"]
    ks = _ints(sec.get("ks", ""))
    nx_list = _ints(sec.get("nx_list", ""))
    nz_list = _ints(sec.get("nz_list", ""))
    if not ks or not nx_list:
        raise ConfigurationError(
            "[convergence] needs ks and nx_list entries")
    if len(nz_list) != len(nx_list):
        raise ConfigurationError("nx_list and nz_list lengths differ")
    plan = []
    for k in ks:
        dts = _floats(sec.get(f"dt_k{k}", ""))
        if len(dts) != len(nx_list):
            raise ConfigurationError(
                f"[convergence] dt_k{k} needs one dt per mesh in nx_list")
        for nx, nz, dt in zip(nx_list, nz_list, dts):
            plan.append({"k": k, "nx": nx, "nz": nz, "dt": dt})
    reference = {
        "k": getint(cfg, "convergence", "reference_k"),
        "nx": getint(cfg, "convergence", "reference_nx"),
        "nz": getint(cfg, "convergence", "reference_nz"),
        "dt": getfloat(cfg, "convergence", "reference_dt"),
    }
    names = sec.get("components", "rho_d, E").replace(",", " ").split()
    for name in names:
        if name not in COMPONENT_NAMES:
            raise ConfigurationError(
                f"unknown component {name!r} in [convergence] components; "
                f"known: {sorted(COMPONENT_NAMES)}")
    return plan, reference, names


def _run_config(cfg, spec, root, subdir):
    run_cfg = _clone_config(cfg)
    run_cfg.set("mesh", "k", str(spec["k"]))
    run_cfg.set("mesh", "nx", str(spec["nx"]))
    run_cfg.set("mesh", "nz", str(spec["nz"]))
    run_cfg.set("time", "dt", repr(spec["dt"]))
    run_cfg.set("output", "directory", str(Path(root) / subdir))
    run_cfg.set("output", "write_modal", "yes")
    run_cfg.set("output", "snapshot_format", "none")
    run_cfg.set("output", "write_profile", "no")
    validate_config(run_cfg)
    return run_cfg


def convergence_study(cfg, progress=None):
    """Run (or reuse) every configured resolution and tabulate the rates.

    Returns ``(rows, csv_path)`` where each row is a dict with keys
    ``k, nx, h, err_<name>..., rate_<name>...``; rates compare successive
    meshes at fixed k and are ``nan`` where undefined (zero errors).
    """
    from .assembly import Discretization
    from .mesh import build_mesh
    from .model import NCOMP

    plan, reference, names = _study_plan(cfg)
    comps = [COMPONENT_NAMES[n] for n in names]
    root = Path(cfg["output"]["directory"])

    def build_disc(run_cfg):
        extents = ((getfloat(run_cfg, "mesh", "x0"),
                    getfloat(run_cfg, "mesh", "x1")),
                   (getfloat(run_cfg, "mesh", "z0"),
                    getfloat(run_cfg, "mesh", "z1")))
        mesh = build_mesh(getint(run_cfg, "mesh", "nx"),
                          getint(run_cfg, "mesh", "nz"), extents,
                          periodic_x=run_cfg["mesh"].getboolean(
                              "periodic_x"))
        return Discretization(mesh, k=getint(run_cfg, "mesh", "k"),
                              ncomp=NCOMP)

    ref_cfg = _run_config(cfg, reference, root, "reference")
    ref_dir, _ = ensure_run(ref_cfg, progress=progress)
    ref_disc = build_disc(ref_cfg)
    ref_snaps = load_run_snapshots(ref_dir)

    rows = []
    for spec in plan:
        sub = f"k{spec['k']}-nx{spec['nx']}"
        run_cfg = _run_config(cfg, spec, root, sub)
        run_dir, _ = ensure_run(run_cfg, progress=progress)
        disc = build_disc(run_cfg)
        snaps = load_run_snapshots(run_dir)
        if len(snaps) != len(ref_snaps):
            raise ConfigurationError(
                f"run {sub} stored {len(snaps)} snapshots, reference "
                f"{len(ref_snaps)}; snapshot intervals must agree")
        err = space_time_l2_error(snaps, ref_snaps, disc, ref_disc,
                                  components=comps)
        h = (getfloat(run_cfg, "mesh", "x1")
             - getfloat(run_cfg, "mesh", "x0")) / spec["nx"]
        row = {"k": spec["k"], "nx": spec["nx"], "h": h}
        for name, e in zip(names, err):
            row[f"err_{name}"] = float(e)
        rows.append(row)

    # observed rates between successive meshes at fixed k
    for row in rows:
        prev = [r for r in rows
                if r["k"] == row["k"] and r["h"] > row["h"]]
        if prev:
            coarser = min(prev, key=lambda r: r["h"])
            ratio = np.log(coarser["h"] / row["h"])
            for name in names:
                e_c, e_f = coarser[f"err_{name}"], row[f"err_{name}"]
                if e_c > 0.0 and e_f > 0.0:
                    row[f"rate_{name}"] = float(
                        np.log(e_c / e_f) / ratio)
                else:
                    row[f"rate_{name}"] = float("nan")
        else:
            for name in names:
                row[f"rate_{name}"] = float("nan")

    csv_path = root / "convergence.csv"
    cols = ["k", "nx", "h"] + [f"err_{n}" for n in names] \
        + [f"rate_{n}" for n in names]
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in rows:
                cells = []
                for c in cols:
                    v = row[c]
                    if isinstance(v, float) and np.isnan(v):
                        cells.append("n/a")
                    elif isinstance(v, float):
                        cells.append(f"{v:.17g}")
                    else:
                        cells.append(str(v))
                fh.write(",".join(cells) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write rate table {csv_path}: {exc}") \
            from None
    return rows, csv_path
