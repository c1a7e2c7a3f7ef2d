"""Tensor-product modal Legendre basis and Gauss-Legendre quadrature.

Reference element is the square [-1,1]^2.  The 1D basis is the
L^2-orthonormal Legendre family l_a(x) = sqrt((2a+1)/2) P_a(x); 2D modes
are products phi_m(xi, eta) = l_a(xi) l_b(eta) with the flattened index
m = a*(k+1) + b.  With this basis the element mass matrix is J * I for an
affine map with constant Jacobian J, so the mass operator is diagonal.

Quadrature nodes/weights are post-processed to be exactly symmetric about
the origin (x[q] == -x[n-1-q] bitwise) and the tabulated basis values are
forced to exact parity across that symmetry; both properties are what make
the discrete operator equivariant under the x-mirror map up to rounding in
the state itself rather than in the tables.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "MAX_ORDER",
    "QuadratureRule",
    "BasisTables",
    "legendre_orthonormal",
    "basis_eval",
    "quadrature_rule",
    "basis_tables",
]

MAX_ORDER = 4            # polynomial orders k = 0..4 are supported


def legendre_orthonormal(k: int, x):
    """Values and derivatives of the orthonormal 1D Legendre family.

    Returns (V, D) with V[a, ...] = l_a(x) and D[a, ...] = l_a'(x) for
    a = 0..k, via the three-term recurrence.
    """
    x = np.asarray(x, dtype=float)
    V = np.zeros((k + 1,) + x.shape)
    D = np.zeros((k + 1,) + x.shape)
    P_prev = np.ones_like(x)       # P_0
    dP_prev = np.zeros_like(x)
    V[0] = np.sqrt(0.5) * P_prev
    if k >= 1:
        P = x.copy()               # P_1
        dP = np.ones_like(x)
        V[1] = np.sqrt(1.5) * P
        D[1] = np.sqrt(1.5) * dP
        for n in range(1, k):
            P_next = ((2 * n + 1) * x * P - n * P_prev) / (n + 1)
            dP_next = dP_prev + (2 * n + 1) * P
            P_prev, P = P, P_next
            dP_prev, dP = dP, dP_next
            norm = np.sqrt(n + 1.5)
            V[n + 1] = norm * P
            D[n + 1] = norm * dP
    return V, D


def basis_eval(k: int, ref_point):
    """Evaluate all (k+1)^2 tensor modes at one reference point.

    Returns (values, gradients) with shapes ((k+1)^2,) and ((k+1)^2, 2);
    gradients are with respect to the reference coordinates.
    """
    if not 0 <= k <= MAX_ORDER:
        raise ConfigurationError(f"polynomial order k={k} outside 0..{MAX_ORDER}")
    xi, eta = float(ref_point[0]), float(ref_point[1])
    Vx, Dx = legendre_orthonormal(k, np.array(xi))
    Vz, Dz = legendre_orthonormal(k, np.array(eta))
    n = (k + 1) ** 2
    values = np.empty(n)
    gradients = np.empty((n, 2))
    for a in range(k + 1):
        for b in range(k + 1):
            m = a * (k + 1) + b
            values[m] = Vx[a] * Vz[b]
            gradients[m, 0] = Dx[a] * Vz[b]
            gradients[m, 1] = Vx[a] * Dz[b]
    return values, gradients


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1,1]^2 (and its 1D factor)."""

    points_1d: np.ndarray     # (n,), exactly antisymmetric about 0
    weights_1d: np.ndarray    # (n,), exactly symmetric
    points: np.ndarray        # (n*n, 2), x fastest in q = qx*n + qz? see note
    weights: np.ndarray       # (n*n,)

    @property
    def npts_1d(self) -> int:
        return self.points_1d.shape[0]


def quadrature_rule(npts_1d: int) -> QuadratureRule:
    """Gauss-Legendre rule, symmetrized so nodes mirror exactly.

    The 2D tensor rule uses the flattened index q = qx * n + qz.
    """
    if npts_1d < 1:
        raise ConfigurationError("quadrature needs at least one point")
    x, w = np.polynomial.legendre.leggauss(npts_1d)
    # force exact +/- node pairs and equal pair weights
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    n = npts_1d
    pts = np.empty((n * n, 2))
    wts = np.empty(n * n)
    for qx in range(n):
        for qz in range(n):
            q = qx * n + qz
            pts[q, 0] = x[qx]
            pts[q, 1] = x[qz]
            wts[q] = w[qx] * w[qz]
    return QuadratureRule(points_1d=x, weights_1d=w, points=pts, weights=wts)


@dataclass(frozen=True)
class BasisTables:
    """Precomputed 1D basis values at quadrature and facet endpoints.

    B[a, q] = l_a(x_q) and D[a, q] = l_a'(x_q) over the 1D quadrature
    nodes; Bl[a] = l_a(-1), Br[a] = l_a(+1) for facet traces.  Parity
    across the node reflection q -> n-1-q is exact:
    B[a, n-1-q] == (-1)^a B[a, q] bitwise (and the opposite parity for D).
    """

    k: int
    rule: QuadratureRule
    B: np.ndarray
    D: np.ndarray
    Bl: np.ndarray
    Br: np.ndarray


def basis_tables(k: int, npts_1d: int) -> BasisTables:
    rule = quadrature_rule(npts_1d)
    B, D = legendre_orthonormal(k, rule.points_1d)
    n = npts_1d
    # enforce exact parity by copying the low half onto the high half
    for a in range(k + 1):
        sign = 1.0 if a % 2 == 0 else -1.0
        for q in range(n // 2):
            B[a, n - 1 - q] = sign * B[a, q]
            D[a, n - 1 - q] = -sign * D[a, q]
        if n % 2 == 1:
            mid = n // 2
            if a % 2 == 1:
                B[a, mid] = 0.0
            else:
                D[a, mid] = 0.0
    Bl_full, _ = legendre_orthonormal(k, np.array(-1.0))
    Br_full, _ = legendre_orthonormal(k, np.array(1.0))
    Bl = np.array([Bl_full[a] for a in range(k + 1)])
    Br = np.array([Br_full[a] for a in range(k + 1)])
    # exact parity between the two endpoint traces as well
    for a in range(k + 1):
        Bl[a] = (1.0 if a % 2 == 0 else -1.0) * Br[a]
    return BasisTables(k=k, rule=rule, B=B, D=D, Bl=Bl, Br=Br)
