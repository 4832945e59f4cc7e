"""Harmonic rectification of a text polygon onto a rectangle.

The map is computed with linear finite elements: the boundary of the
triangulated polygon is pinned to the rectangle boundary by chord-length
parameterization between the four corners, and each coordinate of the
interior is obtained from a discrete Laplace solve.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateSide, NonBijectiveMap, SolverDivergence
from .geom import (
    DEFAULT_AREA_DIVISOR,
    DEFAULT_MAX_VERTICES,
    DEFAULT_MIN_ANGLE,
    FINE_MAX_AREA,
    PointLocator,
    Polygon,
    TriMesh,
    triangle_signed_areas,
    triangulate,
)

log = logging.getLogger(__name__)

SOLVER_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class BoundaryParam:
    """Dirichlet data: target positions for the boundary loop vertices."""

    vertex_ids: np.ndarray  # boundary loop without the closing repeat
    targets: np.ndarray  # (n, 2)
    w: float
    h: float


def boundary_map(mesh: TriMesh, w: float = 1.0, h: float = 1.0) -> BoundaryParam:
    """Pin corners to the rectangle corners and spread each side by chord length.

    The corners (top-left, top-right, bottom-right, bottom-left) go to
    ``(0, h), (w, h), (w, 0), (0, 0)``. A vertex between two corners lands
    at the same fraction of the rectangle side as its accumulated chord
    length is of the whole polygon side.
    """
    if not (w > 0 and h > 0):
        raise ValueError("rectangle dimensions must be positive")
    loop = np.asarray(mesh.boundary_loop)
    n = len(loop) - 1
    pts = mesh.vertices[loop]
    seg = np.hypot(*np.diff(pts, axis=0).T)  # seg[k] = |v_{k+1} - v_k|
    corners = list(mesh.corner_indices) + [n]
    anchors = np.array([[0.0, h], [w, h], [w, 0.0], [0.0, 0.0], [0.0, h]])
    targets = np.empty((n, 2))
    for i in range(4):
        a, b = corners[i], corners[i + 1]
        lengths = seg[a:b]
        total = lengths.sum()
        if not total > 0:
            raise DegenerateSide(f"side {i} has zero chord length")
        frac = np.concatenate([[0.0], np.cumsum(lengths)[:-1]]) / total
        targets[a:b] = anchors[i] + frac[:, None] * (anchors[i + 1] - anchors[i])
        targets[a] = anchors[i]
    return BoundaryParam(vertex_ids=loop[:-1].copy(), targets=targets, w=float(w), h=float(h))


def stiffness_matrix(vertices, triangles) -> sp.csr_matrix:
    """P1 stiffness matrix of the Laplacian (cotangent weights)."""
    p = vertices[triangles]  # (t, 3, 2)
    # b_i = y_j - y_k, c_i = x_k - x_j with (i, j, k) cyclic
    b = np.roll(p[:, :, 1], -1, axis=1) - np.roll(p[:, :, 1], -2, axis=1)
    c = np.roll(p[:, :, 0], -2, axis=1) - np.roll(p[:, :, 0], -1, axis=1)
    area = triangle_signed_areas(vertices, triangles)
    local = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4.0 * area[:, None, None])
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    n = len(vertices)
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _solve_spd(A: sp.csr_matrix, rhs: np.ndarray, rtol: float = SOLVER_RTOL):
    """Direct solve with a conjugate-gradient fallback; returns (x, method, residual)."""
    norm = np.linalg.norm(rhs, axis=0)
    norm[norm == 0] = 1.0

    def residual(x):
        return float(np.max(np.linalg.norm(A @ x - rhs, axis=0) / norm))

    try:
        solve = spla.factorized(A.tocsc())
        x = np.column_stack([solve(rhs[:, k]) for k in range(rhs.shape[1])])
        res = residual(x)
        if res <= rtol:
            return x, "direct", res
        log.warning("direct solve residual %.3g above target, falling back to CG", res)
    except RuntimeError as exc:
        log.warning("direct factorization failed (%s), falling back to CG", exc)

    d = A.diagonal()
    M = sp.diags(1.0 / np.where(d > 0, d, 1.0))
    cols = []
    for k in range(rhs.shape[1]):
        xk, info = spla.cg(A, rhs[:, k], rtol=rtol * 0.1, atol=0.0, maxiter=20 * A.shape[0] + 100, M=M)
        cols.append(xk)
    x = np.column_stack(cols)
    res = residual(x)
    if res > rtol:
        raise SolverDivergence(f"relative residual {res:.3g} > {rtol:.1g}")
    return x, "cg", res


@dataclass(frozen=True, eq=False)
class BijectivityReport:
    flipped: int
    min_signed_area: float
    n_triangles: int

    @property
    def bijective(self) -> bool:
        return self.flipped == 0


@dataclass(frozen=True, eq=False)
class HarmonicMap:
    """Discrete harmonic map: one image position per source mesh vertex."""

    mesh: TriMesh
    image: np.ndarray
    w: float
    h: float
    solver: str = "direct"
    residual: float = 0.0

    @cached_property
    def image_locator(self) -> PointLocator:
        return PointLocator(self.image, self.mesh.triangles)

    @cached_property
    def audit(self) -> BijectivityReport:
        return check_bijective(self)

    def scaled(self, w: float, h: float) -> "HarmonicMap":
        """Same map onto R_{w,h} by coordinatewise scaling."""
        img = self.image * np.array([w / self.w, h / self.h])
        return HarmonicMap(self.mesh, img, float(w), float(h), self.solver, self.residual)


def solve_harmonic(mesh: TriMesh, bc: BoundaryParam) -> HarmonicMap:
    """Solve the Dirichlet problem for both image coordinates."""
    n = len(mesh.vertices)
    K = stiffness_matrix(mesh.vertices, mesh.triangles)
    fixed = np.zeros(n, dtype=bool)
    fixed[bc.vertex_ids] = True
    image = np.zeros((n, 2))
    image[bc.vertex_ids] = bc.targets
    free = np.nonzero(~fixed)[0]
    method, res = "none", 0.0
    if len(free):
        K_ff = K[free][:, free]
        K_fb = K[free][:, np.nonzero(fixed)[0]]
        rhs = -(K_fb @ image[fixed])
        x, method, res = _solve_spd(K_ff.tocsr(), rhs)
        image[free] = x
    return HarmonicMap(mesh=mesh, image=image, w=bc.w, h=bc.h, solver=method, residual=res)


def forward(hmap: HarmonicMap, p) -> np.ndarray:
    """Evaluate the map at point(s) of the source polygon."""
    p = np.asarray(p, dtype=float)
    out = hmap.mesh.locator.interpolate(hmap.image, np.atleast_2d(p))
    return out[0] if p.ndim == 1 else out


def inverse(hmap: HarmonicMap, q) -> np.ndarray:
    """Evaluate the inverse map at point(s) of the rectangle."""
    if not hmap.audit.bijective:
        raise NonBijectiveMap(f"{hmap.audit.flipped} flipped image triangle(s)")
    q = np.asarray(q, dtype=float)
    out = hmap.image_locator.interpolate(hmap.mesh.vertices, np.atleast_2d(q))
    return out[0] if q.ndim == 1 else out


def check_bijective(hmap: HarmonicMap) -> BijectivityReport:
    """Count image triangles with non-positive signed area."""
    sa = triangle_signed_areas(hmap.image, hmap.mesh.triangles)
    return BijectivityReport(flipped=int(np.count_nonzero(sa <= 0)),
                             min_signed_area=float(sa.min()) if len(sa) else 0.0,
                             n_triangles=len(sa))


def inverse_jacobians(hmap: HarmonicMap) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle Jacobian of the inverse map and image triangle areas."""
    t = hmap.mesh.triangles
    P = hmap.mesh.vertices[t]
    Q = hmap.image[t]
    dP = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)  # columns = edges
    dQ = np.stack([Q[:, 1] - Q[:, 0], Q[:, 2] - Q[:, 0]], axis=2)
    # forward J = dQ dP^-1, inverse J^-1 = dP dQ^-1
    Jinv = dP @ np.linalg.inv(dQ)
    return Jinv, triangle_signed_areas(hmap.image, t)


def ctr_dims(hmap: HarmonicMap) -> tuple[float, float]:
    """Mean lengths of the horizontal and vertical fibres of the polygon.

    Integrates the norms of the two columns of the inverse-map Jacobian over
    the unit square. The map is piecewise linear, so the per-triangle
    quadrature is exact.
    """
    if not hmap.audit.bijective:
        raise NonBijectiveMap(f"{hmap.audit.flipped} flipped image triangle(s)")
    Jinv, area = inverse_jacobians(hmap)
    # normalise to the unit square in case the map targets another rectangle
    sx, sy = hmap.w, hmap.h
    area = area / (sx * sy)
    dx = np.hypot(Jinv[:, 0, 0], Jinv[:, 1, 0]) * sx
    dy = np.hypot(Jinv[:, 0, 1], Jinv[:, 1, 1]) * sy
    return float(np.dot(area, dx)), float(np.dot(area, dy))


@dataclass
class CtrConfig:
    """Meshing parameters for CTR construction.

    ``max_area`` overrides everything; otherwise ``fine_density`` uses the
    1e-5 bound of a unit-area polygon and the default is
    ``area / area_divisor``.
    """

    max_area: float | None = None
    area_divisor: float = DEFAULT_AREA_DIVISOR
    fine_density: bool = False
    min_angle: float = DEFAULT_MIN_ANGLE
    max_vertices: int = DEFAULT_MAX_VERTICES

    def resolve_max_area(self, poly_area: float) -> float:
        if self.max_area is not None:
            return self.max_area
        if self.fine_density:
            return FINE_MAX_AREA * poly_area
        return poly_area / self.area_divisor


@dataclass(frozen=True, eq=False)
class Ctr:
    """Conceptual text region of one polygon.

    ``unit_map`` is the harmonic map onto the unit square; the map onto the
    CTR rectangle is its coordinatewise rescale by ``(w_c, h_c)``.
    """

    unit_map: HarmonicMap
    w_c: float
    h_c: float
    report: BijectivityReport
    timings: dict = field(default_factory=dict)

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.w_c, self.h_c])

    @cached_property
    def map(self) -> HarmonicMap:
        return self.unit_map.scaled(self.w_c, self.h_c)

    def to_ctr(self, p) -> np.ndarray:
        return forward(self.unit_map, p) * self.scale

    def from_ctr(self, q) -> np.ndarray:
        return inverse(self.unit_map, np.asarray(q, dtype=float) / self.scale)


def build_ctr(poly: Polygon, config: CtrConfig | None = None) -> Ctr:
    """Triangulate, solve onto the unit square, audit and measure a polygon."""
    config = config or CtrConfig()
    t0 = time.perf_counter()
    mesh = triangulate(poly, config.resolve_max_area(poly.area),
                       min_angle=config.min_angle, max_vertices=config.max_vertices)
    t1 = time.perf_counter()
    hmap = solve_harmonic(mesh, boundary_map(mesh, 1.0, 1.0))
    t2 = time.perf_counter()
    report = hmap.audit
    if not report.bijective:
        raise NonBijectiveMap(f"{report.flipped} flipped image triangle(s)")
    w_c, h_c = ctr_dims(hmap)
    t3 = time.perf_counter()
    return Ctr(unit_map=hmap, w_c=w_c, h_c=h_c, report=report,
               timings={"mesh": t1 - t0, "solve": t2 - t1, "dims": t3 - t2})
