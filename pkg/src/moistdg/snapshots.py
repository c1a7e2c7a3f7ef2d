"""Nodal snapshots on a per-element equispaced grid, VTK-compatible.

Fields are sampled at the (k+1)^2 cell-centred equispaced points of each
element (reference offsets -1 + (2i+1)/(k+1)); across the structured mesh
these tile into one global tensor grid of nx(k+1) x nz(k+1) distinct
points, written as a legacy-VTK ``STRUCTURED_GRID`` dataset.  Per point
the file carries the six conserved perturbations, the recovered vapour
and cloud densities, temperature and pressure perturbation, the velocity
vector, and the derived wet-equivalent and density potential
temperatures (the latter as a perturbation against the hydrostatic
base), so external tools can render every quantity the benchmarks
discuss without re-deriving thermodynamics.

ASCII files print doubles with 17 significant digits and the binary
variant stores raw big-endian doubles, so ``read_snapshot`` reproduces
the sampled values bit-exactly in both modes.
"""

import numpy as np

from .assembly import Discretization
from .basis import legendre_orthonormal
from .errors import ConfigurationError, OutputError
from .model import BaseStateArrays, recover_secondary
from .thermo import density_potential_temperature, \
    wet_equivalent_potential_temperature

__all__ = ["SnapshotSampler", "write_snapshot", "read_snapshot",
           "SCALAR_FIELDS", "VECTOR_FIELDS"]

SCALAR_FIELDS = ("rho_d_pert", "rho_m_pert", "rho_r_pert", "mom_x",
                 "mom_z", "energy_pert", "rho_v", "rho_c", "T", "p_pert",
                 "theta_e", "theta_rho_pert")
VECTOR_FIELDS = ("velocity",)


class SnapshotSampler:
    """Precomputed sampling of modal states onto the global nodal grid."""

    def __init__(self, disc: Discretization, profile, params, const):
        self.disc = disc
        self.params = params
        self.const = const
        m = disc.mesh
        k1 = disc.k + 1
        xi = -1.0 + (2.0 * np.arange(k1) + 1.0) / k1
        self.B = legendre_orthonormal(disc.k, xi)[0]       # (k1, k1)

        # global tensor grid, x index fastest (VTK point order)
        x_nodes = (m.xc[:, None] + 0.5 * m.hx * xi[None, :]).reshape(-1)
        z_nodes = (m.zc[:, None] + 0.5 * m.hz * xi[None, :]).reshape(-1)
        self.x = np.broadcast_to(x_nodes[None, :],
                                 (z_nodes.size, x_nodes.size)).copy()
        self.z = np.broadcast_to(z_nodes[:, None],
                                 (z_nodes.size, x_nodes.size)).copy()

        pv = profile.evaluate(z_nodes)
        col = lambda a: np.asarray(a, dtype=float)[:, None]   # (npz, 1)
        self.base = BaseStateArrays(
            rho_d=col(pv.rho_d), rho_m=col(pv.rho_v) + col(pv.rho_c),
            rho_r=col(pv.rho_r), p=col(pv.p), E=col(pv.E), T=col(pv.T))
        self.base_rho_v = col(pv.rho_v)

    def _grid(self, vals):
        """(E, C, k1, k1) element samples -> (C, npz, npx) global grid."""
        m = self.disc.mesh
        k1 = self.disc.k + 1
        ncomp = vals.shape[1]
        byelem = vals.reshape(m.nz, m.nx, ncomp, k1, k1)
        return byelem.transpose(2, 0, 4, 1, 3).reshape(
            ncomp, m.nz * k1, m.nx * k1)

    def sample(self, coef):
        """Evaluate, recover and derive every snapshot field.

        Returns ``{name: (npz, npx) array}`` plus ``velocity`` with a
        trailing length-2 axis.
        """
        disc = self.disc
        c4 = disc._coef4(coef)
        vals = np.einsum("ecab,aq,br->ecqr", c4, self.B, self.B,
                         optimize=True)
        du = self._grid(vals)                               # (6, npz, npx)
        S = recover_secondary(du, self.base, params=self.params,
                              const=self.const)
        const = self.const
        q_w = (S.rho_m_tot + S.rho_r_tot) / S.rho_d_tot
        theta_e = wet_equivalent_potential_temperature(
            S.rho_d_tot, S.rho_v, S.T, q_w, const)
        theta_rho = density_potential_temperature(
            S.p, S.T, S.rho_v / S.rho_d_tot, const)
        theta_rho_base = density_potential_temperature(
            self.base.p, self.base.T, self.base_rho_v / self.base.rho_d,
            const)
        out = {
            "rho_d_pert": du[0], "rho_m_pert": du[1], "rho_r_pert": du[2],
            "mom_x": du[3], "mom_z": du[4], "energy_pert": du[5],
            "rho_v": S.rho_v, "rho_c": S.rho_c, "T": S.T,
            "p_pert": S.p_pert,
            "theta_e": theta_e,
            "theta_rho_pert": theta_rho - theta_rho_base,
            "velocity": np.stack([S.ux, S.uz], axis=-1),
        }
        return out


def write_snapshot(path, sampler: SnapshotSampler, coef, t: float,
                   fmt: str = "ascii", title: str = "moistdg"):
    """Sample ``coef`` and write one VTK structured-grid file."""
    if fmt not in ("ascii", "binary"):
        raise ConfigurationError(f"snapshot format must be ascii or binary, "
                                 f"got {fmt!r}")
    fields = sampler.sample(coef)
    npz, npx = sampler.x.shape
    n = npx * npz
    binary = fmt == "binary"

    def block(arr):
        flat = np.ascontiguousarray(arr, dtype=float).reshape(-1)
        if binary:
            return flat.astype(">f8").tobytes() + b"\n"
        return ("\n".join(f"{v:.17g}" for v in flat) + "\n").encode()

    pts = np.zeros((npz, npx, 3))
    pts[:, :, 0] = sampler.x
    pts[:, :, 1] = sampler.z
    chunks = [
        b"# vtk DataFile Version 3.0\n",
        f"{title} t={t:.17g}\n".encode(),
        b"BINARY\n" if binary else b"ASCII\n",
        b"DATASET STRUCTURED_GRID\n",
        f"DIMENSIONS {npx} {npz} 1\n".encode(),
        f"POINTS {n} double\n".encode(),
        block(pts),
        f"POINT_DATA {n}\n".encode(),
    ]
    for name in SCALAR_FIELDS:
        chunks.append(f"SCALARS {name} double\n".encode())
        chunks.append(b"LOOKUP_TABLE default\n")
        chunks.append(block(fields[name]))
    for name in VECTOR_FIELDS:
        vec = np.zeros((npz, npx, 3))
        vec[:, :, :2] = fields[name]
        chunks.append(f"VECTORS {name} double\n".encode())
        chunks.append(block(vec))
    try:
        with open(path, "wb") as fh:
            fh.writelines(chunks)
    except OSError as exc:
        raise OutputError(f"cannot write snapshot {path}: {exc}") from None


class _Scanner:
    """Sequential reader over the two legacy-VTK payload encodings."""

    def __init__(self, data: bytes, binary: bool):
        self.data = data
        self.pos = 0
        self.binary = binary

    def line(self) -> str:
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            end = len(self.data)
        out = self.data[self.pos:end]
        self.pos = end + 1
        return out.decode("ascii", "replace").strip()

    def doubles(self, count: int) -> np.ndarray:
        if self.binary:
            nbytes = 8 * count
            raw = self.data[self.pos:self.pos + nbytes]
            if len(raw) != nbytes:
                raise OutputError("snapshot truncated inside a data block")
            self.pos += nbytes
            if self.data[self.pos:self.pos + 1] == b"\n":
                self.pos += 1
            return np.frombuffer(raw, dtype=">f8").astype(float)
        vals = []
        while len(vals) < count:
            line = self.line()
            if not line and self.pos >= len(self.data):
                raise OutputError("snapshot truncated inside a data block")
            if line:
                vals.extend(float(tok) for tok in line.split())
        if len(vals) != count:
            raise OutputError("snapshot data block has extra values")
        return np.array(vals)


def read_snapshot(path):
    """Parse a file written by :func:`write_snapshot` bit-exactly.

    Returns ``(coords, fields, meta)`` where coords has ``x``/``z``
    grids, fields maps names to ``(npz, npx)`` arrays (vectors with a
    trailing length-2 axis), and meta carries the title line and time.
    """
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise OutputError(f"cannot read snapshot {path}: {exc}") from None
    head = _Scanner(data, binary=False)
    magic = head.line()
    if not magic.startswith("# vtk DataFile"):
        raise OutputError(f"{path} is not a legacy VTK file")
    title = head.line()
    encoding = head.line().upper()
    if encoding not in ("ASCII", "BINARY"):
        raise OutputError(f"unknown VTK encoding {encoding!r}")
    sc = _Scanner(data, binary=encoding == "BINARY")
    sc.pos = head.pos
    if sc.line() != "DATASET STRUCTURED_GRID":
        raise OutputError("snapshot is not a structured grid")
    dims = sc.line().split()
    if dims[0] != "DIMENSIONS":
        raise OutputError("missing DIMENSIONS header")
    npx, npz = int(dims[1]), int(dims[2])
    n = npx * npz
    pts_head = sc.line().split()
    if pts_head[0] != "POINTS" or int(pts_head[1]) != n:
        raise OutputError("POINTS header disagrees with DIMENSIONS")
    pts = sc.doubles(3 * n).reshape(npz, npx, 3)
    if sc.line().split() != ["POINT_DATA", str(n)]:
        raise OutputError("missing POINT_DATA header")

    fields = {}
    while True:
        line = sc.line()
        if not line and sc.pos >= len(sc.data):
            break
        if not line:
            continue
        words = line.split()
        if words[0] == "SCALARS":
            lut = sc.line()
            if not lut.startswith("LOOKUP_TABLE"):
                raise OutputError(f"missing lookup table after {words[1]}")
            fields[words[1]] = sc.doubles(n).reshape(npz, npx)
        elif words[0] == "VECTORS":
            vec = sc.doubles(3 * n).reshape(npz, npx, 3)
            fields[words[1]] = vec[:, :, :2].copy()
        else:
            raise OutputError(f"unsupported snapshot attribute {words[0]!r}")
    meta = {"title": title}
    if " t=" in title:
        meta["t"] = float(title.rsplit("t=", 1)[1].split()[0])
    coords = {"x": pts[:, :, 0].copy(), "z": pts[:, :, 1].copy()}
    return coords, fields, meta
