"""Run orchestration: build a case, advance it, write every artifact.

``run_case`` turns a merged configuration into a finished run directory:

    diagnostics.csv    fixed-column time series (flushed per row)
    profile.csv        hydrostatic base column (optional)
    snapshot_NNNN.vtk  nodal structured-grid snapshots (optional)
    state_NNNN.npz     modal field dumps for error evaluation (optional)
    snapshots.csv      manifest mapping snapshot index -> step, time, files
    restart.npz        resume-exact checkpoint, refreshed at each snapshot
    summary.json       machine-readable outcome (also written on failure)

``ensure_run`` wraps ``run_case`` with a cache check: when the output
directory already holds a summary whose configuration hash matches, the
run is reused instead of recomputed -- convergence studies and the
acceptance harness lean on this to share the expensive reference run.
"""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .assembly import Discretization
from .cases import get_case
from .config import config_hash, constants_from_config, getbool, getfloat, \
    getint, params_from_config
from .diagnostics import DiagnosticsWriter, compute_diagnostics
from .errors import MoistDgError, OutputError
from .mesh import build_mesh
from .model import NCOMP
from .operator import MoistOperator, project_pointwise, symmetrize_x
from .restart import load_checkpoint, save_checkpoint, save_modal
from .snapshots import SnapshotSampler, write_snapshot
from .timestep import SpongeLayer, apply_sponge, ssprk43_step

__all__ = ["RunResult", "run_case", "ensure_run"]


@dataclasses.dataclass
class RunResult:
    """Everything a caller may want after a finished run."""

    config: object
    cfg_hash: str
    case: str
    disc: Discretization
    op: MoistOperator
    profile: object
    u: np.ndarray
    t: float
    steps: int
    wall_time: float
    diagnostics: list
    snapshot_times: list
    output_dir: Path
    summary: dict


def _build_operator(cfg, setup, const, params):
    nx, nz = getint(cfg, "mesh", "nx"), getint(cfg, "mesh", "nz")
    extents = ((getfloat(cfg, "mesh", "x0"), getfloat(cfg, "mesh", "x1")),
               (getfloat(cfg, "mesh", "z0"), getfloat(cfg, "mesh", "z1")))
    mesh = build_mesh(nx, nz, extents,
                      periodic_x=getbool(cfg, "mesh", "periodic_x"))
    disc = Discretization(mesh, k=getint(cfg, "mesh", "k"), ncomp=NCOMP)
    op = MoistOperator(
        disc, setup.profile.base_state, params=params, const=const,
        microphysics_enabled=setup.microphysics_enabled,
        viscosity_gamma=getfloat(cfg, "physics", "viscosity_gamma"),
        sip_sigma=getfloat(cfg, "physics", "sip_sigma"),
        sip_penalty_mode=cfg["physics"].get("sip_penalty_mode",
                                            "k2_over_h"),
        backend=cfg["physics"].get("backend", "auto"))
    return disc, op


def _initial_state(cfg, disc, setup):
    if setup.initial_condition is None:
        u = disc.zeros()
    else:
        u = project_pointwise(disc, setup.initial_condition)
    if getbool(cfg, "case", "symmetrize_initial", False):
        u = symmetrize_x(disc, u)
    return u


def _trim_diagnostics(path, t0):
    """Rewrite the diagnostics file keeping only rows with t <= t0."""
    if not path.exists():
        return
    try:
        with open(path) as fh:
            lines = fh.readlines()
        if not lines:
            return
        kept = [lines[0]]
        for line in lines[1:]:
            try:
                t = float(line.split(",", 1)[0])
            except ValueError:
                continue
            if t <= t0 + 1e-9 * max(1.0, abs(t0)):
                kept.append(line)
        with open(path, "w") as fh:
            fh.writelines(kept)
    except OSError as exc:
        raise OutputError(f"cannot trim diagnostics file: {exc}") from None


def _sponge_from_config(cfg):
    if not getbool(cfg, "sponge", "enabled", False):
        return None
    return SpongeLayer(z_D=getfloat(cfg, "sponge", "z_bottom"),
                       z_T=getfloat(cfg, "mesh", "z1"),
                       alpha=getfloat(cfg, "sponge", "alpha"))


class _SnapshotSink:
    """Writes the configured snapshot artifacts and their manifest."""

    def __init__(self, cfg, outdir, disc, setup, const, params,
                 append=False):
        self.fmt = cfg["output"].get("snapshot_format", "ascii")
        self.modal = getbool(cfg, "output", "write_modal", False)
        self.outdir = outdir
        self.disc = disc
        self.index = 0
        self.times = []
        self.sampler = None
        if self.fmt != "none":
            self.sampler = SnapshotSampler(disc, setup.profile, params,
                                           const)
        mode = "a" if append else "w"
        try:
            self._manifest = open(outdir / "snapshots.csv", mode,
                                  newline="")
        except OSError as exc:
            raise OutputError(f"cannot open snapshot manifest: {exc}") \
                from None
        if not append:
            self._manifest.write("index,step,t,snapshot,modal\n")
            self._manifest.flush()

    def emit(self, coef, t, step, case_name):
        vtk_name = modal_name = ""
        if self.sampler is not None:
            vtk_name = f"snapshot_{self.index:04d}.vtk"
            write_snapshot(self.outdir / vtk_name, self.sampler, coef, t,
                           fmt=self.fmt, title=f"moistdg {case_name}")
        if self.modal:
            modal_name = f"state_{self.index:04d}.npz"
            save_modal(self.outdir / modal_name, self.disc, coef, t, step)
        self._manifest.write(
            f"{self.index},{step},{t:.17g},{vtk_name},{modal_name}\n")
        self._manifest.flush()
        self.times.append(float(t))
        self.index += 1

    def close(self):
        self._manifest.close()


def run_case(cfg, progress=None, restart_path=None) -> RunResult:
    """Advance one configured case from t = 0 (or a checkpoint) to t_end."""
    const = constants_from_config(cfg)
    params = params_from_config(cfg)
    case = get_case(cfg["case"]["name"])
    setup = case.build(cfg, const)
    disc, op = _build_operator(cfg, setup, const, params)
    sponge = _sponge_from_config(cfg)
    cfg_hash = config_hash(cfg)

    dt = getfloat(cfg, "time", "dt")
    t_end = getfloat(cfg, "time", "t_end")
    steps = round(t_end / dt)
    snap_every = max(1, round(getfloat(cfg, "time", "snapshot_interval")
                              / dt))
    diag_every = getint(cfg, "time", "diagnostics_interval")
    report_every = getint(cfg, "time", "report_interval", 200)

    outdir = Path(cfg["output"]["directory"])
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {outdir}: "
                          f"{exc}") from None

    resuming = restart_path is not None
    if resuming:
        u, t0, step0 = load_checkpoint(restart_path, disc, op, cfg_hash)
        # diagnostics rows may postdate the checkpoint (finer cadence than
        # snapshots); drop them so the appended series stays consistent
        _trim_diagnostics(outdir / "diagnostics.csv", t0)
    else:
        u, t0, step0 = _initial_state(cfg, disc, setup), 0.0, 0

    writer = DiagnosticsWriter(outdir / "diagnostics.csv", append=resuming)
    sink = _SnapshotSink(cfg, outdir, disc, setup, const, params,
                         append=resuming)
    if resuming:
        sink.index = step0 // snap_every + 1

    records = []
    write_restart = getbool(cfg, "output", "write_restart", True)
    started = time.perf_counter()
    if getbool(cfg, "output", "write_profile", False) and not resuming:
        setup.profile.write_csv(outdir / "profile.csv")
    if not resuming:
        rec = compute_diagnostics(disc, op, u, 0.0)
        writer.write(rec)
        records.append(rec)
        sink.emit(u, 0.0, 0, case.name)

    try:
        for s in range(step0 + 1, steps + 1):
            t = s * dt
            try:
                u = ssprk43_step(u, dt, op.rhs)
                if sponge is not None:
                    u = apply_sponge(disc, u, sponge)
            except MoistDgError as exc:
                raise exc.__class__(
                    f"step {s} (t = {t:.6g} s): {exc}") from exc
            if s % diag_every == 0 or s == steps:
                rec = compute_diagnostics(disc, op, u, t)
                writer.write(rec)
                records.append(rec)
            if s % snap_every == 0 or s == steps:
                sink.emit(u, t, s, case.name)
                if write_restart:
                    # refresh the checkpoint so long runs resume from the
                    # latest snapshot instead of restarting from scratch
                    save_checkpoint(outdir / "restart.npz", disc, op, u,
                                    t, s, cfg_hash)
            if progress is not None and (s % report_every == 0
                                         or s == steps):
                el = time.perf_counter() - started
                progress(f"[{case.name}] step {s}/{steps}  "
                         f"t = {t:.6g} s  elapsed {el:.1f} s")
    except BaseException as exc:
        _write_summary(cfg, outdir, case.name, op, records, sink,
                       steps=None, wall=time.perf_counter() - started,
                       cfg_hash=cfg_hash, error=str(exc))
        writer.close()
        sink.close()
        raise

    wall = time.perf_counter() - started
    if write_restart:
        save_checkpoint(outdir / "restart.npz", disc, op, u,
                        steps * dt, steps, cfg_hash)
    summary = _write_summary(cfg, outdir, case.name, op, records, sink,
                             steps=steps, wall=wall, cfg_hash=cfg_hash)
    writer.close()
    sink.close()
    return RunResult(
        config=cfg, cfg_hash=cfg_hash, case=case.name, disc=disc, op=op,
        profile=setup.profile, u=np.asarray(u), t=steps * dt,
        steps=steps, wall_time=wall, diagnostics=records,
        snapshot_times=sink.times, output_dir=outdir, summary=summary)


def _write_summary(cfg, outdir, case_name, op, records, sink, steps, wall,
                   cfg_hash, error=None):
    summary = {
        "case": case_name,
        "status": "failed" if error else "completed",
        "backend": op.backend,
        "nx": getint(cfg, "mesh", "nx"),
        "nz": getint(cfg, "mesh", "nz"),
        "k": getint(cfg, "mesh", "k"),
        "dt": getfloat(cfg, "time", "dt"),
        "t_end": getfloat(cfg, "time", "t_end"),
        "steps": steps,
        "wall_time_s": wall,
        "config_hash": cfg_hash,
        "snapshot_times": [float(t) for t in sink.times],
        "total_fallout": float(op.total_fallout()),
        "final_diagnostics": dataclasses.asdict(records[-1])
        if records else None,
    }
    if error:
        summary["error"] = error
    try:
        with open(outdir / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        if error:
            return summary     # do not mask the original failure
        raise OutputError(f"cannot write summary: {exc}") from None
    return summary


def ensure_run(cfg, progress=None):
    """Run the case unless the output directory already holds it.

    Reuse requires a completed summary with a matching configuration
    hash; anything else (missing, failed, different config) triggers a
    fresh run.  Returns ``(output_dir, summary)``.
    """
    outdir = Path(cfg["output"]["directory"])
    summary_path = outdir / "summary.json"
    if summary_path.exists():
        try:
            with open(summary_path) as fh:
                summary = json.load(fh)
        except (OSError, json.JSONDecodeError):
            summary = None
        if (summary and summary.get("status") == "completed"
                and summary.get("config_hash") == config_hash(cfg)):
            if progress is not None:
                progress(f"[{summary['case']}] reusing completed run in "
                         f"{outdir}")
            return outdir, summary
    result = run_case(cfg, progress=progress)
    return result.output_dir, result.summary
