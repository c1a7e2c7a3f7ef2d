"""Structured quadrilateral mesh with fixed facet orientation.

Elements are axis-aligned rectangles of uniform size, indexed row-major by
height: element e = j*nx + i sits at column i, level j.  Every facet
carries a fixed unit normal chosen once: vertical facets point in +x (the
left element is the minus side), horizontal facets point in +z (the lower
element is the minus side), boundary facets point outward.  With
``periodic_x`` the left/right column facets become ordinary interior
facets (including the wrap pair).

Element centers are constructed exactly mirror-symmetric about the domain
midline in x, which together with the parity-exact basis tables makes the
discrete operator commute with the x-reflection map.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = ["Facet", "StructuredQuadMesh", "build_mesh"]


@dataclass(frozen=True)
class Facet:
    """One mesh facet, for introspection and generic assembly loops."""

    kind: str                 # "interior" | "boundary"
    orientation: str          # "vertical" | "horizontal"
    elem_minus: int
    elem_plus: int | None     # None on boundary facets
    normal: tuple             # fixed unit normal (nx, nz)
    tag: str | None           # boundary tag or None


@dataclass
class StructuredQuadMesh:
    nx: int
    nz: int
    x_extent: tuple
    z_extent: tuple
    periodic_x: bool
    hx: float = field(init=False)
    hz: float = field(init=False)
    jacobian: float = field(init=False)
    xc: np.ndarray = field(init=False)    # element-center x per column
    zc: np.ndarray = field(init=False)    # element-center z per level

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1:
            raise ConfigurationError("mesh needs at least one element per direction")
        x0, x1 = map(float, self.x_extent)
        z0, z1 = map(float, self.z_extent)
        if not (x1 > x0 and z1 > z0):
            raise ConfigurationError("mesh extents must have positive length")
        self.x_extent = (x0, x1)
        self.z_extent = (z0, z1)
        self.hx = (x1 - x0) / self.nx
        self.hz = (z1 - z0) / self.nz
        self.jacobian = 0.25 * self.hx * self.hz
        # mirror-exact centers: the right half is the reflected left half
        xc = np.array([x0 + (i + 0.5) * self.hx for i in range(self.nx)])
        mirror_sum = x0 + x1
        for i in range(self.nx // 2):
            xc[self.nx - 1 - i] = mirror_sum - xc[i]
        if self.nx % 2 == 1:
            xc[self.nx // 2] = 0.5 * mirror_sum
        self.xc = xc
        self.zc = np.array([z0 + (j + 0.5) * self.hz for j in range(self.nz)])

    # ------------------------------------------------------------------
    @property
    def n_elements(self) -> int:
        return self.nx * self.nz

    def element_index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def element_center(self, e: int):
        j, i = divmod(e, self.nx)
        return self.xc[i], self.zc[j]

    # grouped facet arrays (minus, plus) used by the assembly kernels -----
    def vertical_interior_pairs(self):
        """(elem_minus, elem_plus) for facets with normal (+1, 0)."""
        minus, plus = [], []
        for j in range(self.nz):
            for i in range(self.nx - 1):
                minus.append(self.element_index(i, j))
                plus.append(self.element_index(i + 1, j))
            if self.periodic_x:
                minus.append(self.element_index(self.nx - 1, j))
                plus.append(self.element_index(0, j))
        return np.array(minus, dtype=np.intp), np.array(plus, dtype=np.intp)

    def horizontal_interior_pairs(self):
        """(elem_minus, elem_plus) for facets with normal (0, +1)."""
        minus, plus = [], []
        for j in range(self.nz - 1):
            for i in range(self.nx):
                minus.append(self.element_index(i, j))
                plus.append(self.element_index(i, j + 1))
        return np.array(minus, dtype=np.intp), np.array(plus, dtype=np.intp)

    def boundary_elements(self, tag: str):
        """Element indices along one boundary, with its outward normal."""
        if tag == "bottom":
            elems = [self.element_index(i, 0) for i in range(self.nx)]
            normal = (0.0, -1.0)
        elif tag == "top":
            elems = [self.element_index(i, self.nz - 1) for i in range(self.nx)]
            normal = (0.0, 1.0)
        elif tag == "left":
            elems = [self.element_index(0, j) for j in range(self.nz)]
            normal = (-1.0, 0.0)
        elif tag == "right":
            elems = [self.element_index(self.nx - 1, j) for j in range(self.nz)]
            normal = (1.0, 0.0)
        else:
            raise ConfigurationError(f"unknown boundary tag {tag!r}")
        return np.array(elems, dtype=np.intp), normal

    @property
    def boundary_tags(self):
        tags = ["bottom", "top"]
        if not self.periodic_x:
            tags += ["left", "right"]
        return tags

    def facets(self):
        """Flat facet list (interior first), for tests and inspection."""
        out = []
        vm, vp = self.vertical_interior_pairs()
        for a, b in zip(vm, vp):
            out.append(Facet("interior", "vertical", int(a), int(b),
                             (1.0, 0.0), None))
        hm, hp = self.horizontal_interior_pairs()
        for a, b in zip(hm, hp):
            out.append(Facet("interior", "horizontal", int(a), int(b),
                             (0.0, 1.0), None))
        for tag in self.boundary_tags:
            elems, normal = self.boundary_elements(tag)
            orient = "horizontal" if tag in ("bottom", "top") else "vertical"
            for e in elems:
                out.append(Facet("boundary", orient, int(e), None, normal, tag))
        return out

    @property
    def n_interior_facets(self) -> int:
        nv = (self.nx if self.periodic_x else self.nx - 1) * self.nz
        return nv + self.nx * (self.nz - 1)

    @property
    def n_boundary_facets(self) -> int:
        return 2 * self.nx + (0 if self.periodic_x else 2 * self.nz)


def build_mesh(nx: int, nz: int, extents, periodic_x: bool = False) -> StructuredQuadMesh:
    """Construct the uniform quad mesh.

    ``extents`` is ((x0, x1), (z0, z1)).
    """
    (x0, x1), (z0, z1) = extents
    return StructuredQuadMesh(nx=nx, nz=nz, x_extent=(x0, x1),
                              z_extent=(z0, z1), periodic_x=periodic_x)
