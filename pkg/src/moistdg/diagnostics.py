"""Run diagnostics: conserved totals, extrema, perturbation norms, CSV.

The CSV column order is fixed by the external interface:

    t, mass_dry, mass_water, rain_fallout, max_speed, min_T, max_T,
    l2_rho_d_pert, l2_E_pert

Masses are full totals (hydrostatic base plus perturbation) so the file
is readable on its own; conservation checks difference the column, which
cancels the constant base contribution exactly.  The perturbation
integrals are modal (mode 0 integrates the basis exactly), so the
conservation statement is bitwise meaningful.  All recoveries run with
the base temperature as the Newton guess and never touch the operator's
warm-start caches, so writing diagnostics does not perturb the solution
path of the run.
"""

import dataclasses

import numpy as np

from .assembly import Discretization, eval_volume
from .errors import NumericalError, OutputError
from .model import I_E, I_RHO_D, I_RHO_M, I_RHO_R, recover_secondary

__all__ = ["DiagnosticsRecord", "DiagnosticsWriter", "CSV_COLUMNS",
           "compute_diagnostics"]

CSV_COLUMNS = ("t", "mass_dry", "mass_water", "rain_fallout", "max_speed",
               "min_T", "max_T", "l2_rho_d_pert", "l2_E_pert")


@dataclasses.dataclass(frozen=True)
class DiagnosticsRecord:
    """One diagnostics row; field order matches the CSV columns."""

    t: float
    mass_dry: float
    mass_water: float
    rain_fallout: float
    max_speed: float
    min_T: float
    max_T: float
    l2_rho_d_pert: float
    l2_E_pert: float

    def row(self):
        return tuple(getattr(self, name) for name in CSV_COLUMNS)


def _base_masses(disc: Discretization, op):
    """Quadrature of the base densities over the domain (computed once)."""
    m = disc.mesh
    w1 = disc.tables.rule.weights_1d
    shape = (m.n_elements, disc.nq, disc.nq)

    def integrate(field):
        return np.einsum("eqr,q,r->", field.reshape(shape), w1, w1) \
            * m.jacobian

    dry = integrate(op.base_vol.rho_d)
    water = integrate(op.base_vol.rho_m) + integrate(op.base_vol.rho_r)
    return dry, water


def compute_diagnostics(disc: Discretization, op, coef, t: float
                        ) -> DiagnosticsRecord:
    """Evaluate one diagnostics record for the state ``coef`` at time ``t``."""
    coef = np.asarray(coef).reshape(disc.shape)
    if not np.all(np.isfinite(coef)):
        raise NumericalError(f"non-finite state at t = {t:.6g} s")
    m = disc.mesh
    cache = getattr(op, "_diag_base_masses", None)
    if cache is None:
        cache = _base_masses(disc, op)
        op._diag_base_masses = cache
    base_dry, base_water = cache

    # mode-0 coefficients integrate exactly: int phi_00 = 2 J
    area = 2.0 * m.jacobian
    mass_dry = base_dry + coef[:, I_RHO_D, 0].sum() * area
    mass_water = base_water \
        + (coef[:, I_RHO_M, 0] + coef[:, I_RHO_R, 0]).sum() * area

    vals = eval_volume(disc, coef)                     # (E, C, nq, nq)
    flat = vals.transpose(1, 0, 2, 3).reshape(vals.shape[1], -1)
    S = recover_secondary(flat, op.base_vol, params=op.params,
                          const=op.const)
    max_speed = float(np.hypot(S.ux, S.uz).max())
    # L2 norms of the modal perturbations (orthonormal basis: J sum c^2)
    sq = np.sum(np.square(coef), axis=(0, 2)) * m.jacobian
    return DiagnosticsRecord(
        t=float(t),
        mass_dry=float(mass_dry),
        mass_water=float(mass_water),
        rain_fallout=float(op.total_fallout()),
        max_speed=max_speed,
        min_T=float(S.T.min()),
        max_T=float(S.T.max()),
        l2_rho_d_pert=float(np.sqrt(sq[I_RHO_D])),
        l2_E_pert=float(np.sqrt(sq[I_E])),
    )


class DiagnosticsWriter:
    """Append-only CSV sink, flushed per row so aborted runs keep data."""

    def __init__(self, path, append=False):
        self.path = path
        try:
            self._fh = open(path, "a" if append else "w", newline="")
        except OSError as exc:
            raise OutputError(f"cannot open diagnostics file {path}: "
                              f"{exc}") from None
        if not append:
            self._fh.write(",".join(CSV_COLUMNS) + "\n")
            self._fh.flush()
        self._last_fallout = -np.inf

    def write(self, rec: DiagnosticsRecord):
        if rec.rain_fallout < self._last_fallout:
            raise NumericalError(
                f"rain fallout decreased at t = {rec.t:.6g} s")
        self._last_fallout = rec.rain_fallout
        try:
            self._fh.write(",".join(f"{v:.17g}" for v in rec.row()) + "\n")
            self._fh.flush()
        except OSError as exc:
            raise OutputError(f"cannot write diagnostics row: {exc}") \
                from None

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False
