"""Polygon handling, constrained triangulation, point location and IoU.

All coordinates here are in the internal y-up frame. Text polygons are
stored starting at the top-left corner and running top-left -> top-right ->
bottom-right -> bottom-left, which is clockwise in a y-up frame (negative
shoelace area).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import shapely
import triangle
from shapely.geometry import LinearRing
from shapely.geometry import Polygon as ShapelyPolygon

from .errors import (
    BadCorners,
    NonSimplePolygon,
    PointOutsideMesh,
    RefinementFailure,
    TooFewVertices,
)

DEFAULT_AREA_DIVISOR = 2000.0
FINE_MAX_AREA = 1e-5  # max triangle area for a unit-area polygon
DEFAULT_MIN_ANGLE = 20.0
DEFAULT_MAX_VERTICES = 400_000


def signed_area(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple text polygon with four reading-order corner indices.

    ``vertices`` is an (n, 2) array; ``corners`` holds the indices of the
    top-left, top-right, bottom-right and bottom-left corners, with
    ``corners[0] == 0``.
    """

    vertices: np.ndarray
    corners: tuple

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def area(self) -> float:
        return abs(signed_area(self.vertices))

    @cached_property
    def shape(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)

    @property
    def bounds(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return lo[0], lo[1], hi[0], hi[1]

    def sides(self):
        """Vertex index runs for the top, right, bottom and left sides."""
        c = list(self.corners) + [self.n]
        out = []
        for i in range(4):
            idx = list(range(c[i], c[i + 1] + 1))
            out.append([k % self.n for k in idx])
        return out

    def transformed(self, fn) -> "Polygon":
        """Apply a point transform, keeping the corner annotation."""
        return validate_polygon(fn(self.vertices.copy()), self.corners)


def validate_polygon(points, corners) -> Polygon:
    """Check and normalize a raw annotation.

    Exact consecutive duplicates are merged, the vertex order is made
    clockwise (y-up) and the list is rotated so that the first corner is
    vertex 0.

    Raises
    ------
    TooFewVertices, BadCorners, NonSimplePolygon
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = len(pts)
    if n < 4:
        raise TooFewVertices(f"need at least 4 vertices, got {n}")
    corners = [int(c) for c in corners]
    if len(corners) != 4:
        raise BadCorners("exactly four corner indices are required")
    if any(c < 0 or c >= n for c in corners):
        raise BadCorners(f"corner index out of range for {n} vertices: {corners}")
    if len(set(corners)) != 4:
        raise BadCorners(f"corner indices must be distinct: {corners}")

    # merge exact duplicates (including the wrap-around pair); a dropped
    # vertex hands its corner role to the copy that is kept
    keep = np.ones(n, dtype=bool)
    new_index = np.arange(n)
    for i in range(1, n):
        if np.array_equal(pts[i], pts[i - 1]):
            keep[i] = False
    if n > 1 and np.array_equal(pts[0], pts[-1]):
        keep[n - 1] = False
    kept_pos = np.cumsum(keep) - 1
    for i in range(n):
        j = i
        while not keep[j]:
            j -= 1
        new_index[i] = kept_pos[j]
    if not keep[n - 1] and np.array_equal(pts[0], pts[-1]):
        new_index[n - 1] = 0
    pts = pts[keep]
    corners = [int(new_index[c]) for c in corners]
    n = len(pts)
    if n < 4:
        raise TooFewVertices(f"need at least 4 distinct vertices, got {n}")
    if len(set(corners)) != 4:
        raise BadCorners("corner vertices collapse after merging duplicates")

    shifted = [(c - corners[0]) % n for c in corners]
    if not all(a < b for a, b in zip(shifted, shifted[1:])):
        raise BadCorners(f"corner indices are not in cyclic order: {corners}")

    ring = LinearRing(pts)
    if not ring.is_simple:
        raise NonSimplePolygon("polygon boundary self-intersects")
    sa = signed_area(pts)
    if sa == 0.0:
        raise NonSimplePolygon("polygon has zero area")

    pts = np.roll(pts, -corners[0], axis=0)
    if sa > 0:
        # reverse the traversal, keep v0 in place; the corner sequence is
        # re-read in the new traversal direction
        order = (-np.arange(n)) % n
        pts = pts[order]
        shifted = sorted((-s) % n for s in shifted)
    return Polygon(vertices=pts, corners=tuple(int(s) for s in shifted))


def point_in_polygon(poly: Polygon, p) -> bool:
    """True if ``p`` lies inside ``poly`` or on its boundary."""
    return bool(shapely.intersects_xy(poly.shape, float(p[0]), float(p[1])))


def points_in_polygon(poly: Polygon, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    shape = poly.shape
    shapely.prepare(shape)
    return shapely.intersects_xy(shape, pts[:, 0], pts[:, 1])


def polygon_iou(a, b) -> float:
    """Intersection over union of two polygons (exact clipping)."""
    sa = a.shape if isinstance(a, Polygon) else a
    sb = b.shape if isinstance(b, Polygon) else b
    if sa.equals(sb):
        return 1.0
    inter = sa.intersection(sb).area
    if inter <= 0.0:
        return 0.0
    union = sa.area + sb.area - inter
    return float(min(1.0, inter / union))


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulated polygon.

    ``boundary_loop`` lists boundary vertex indices in polygon order and is
    closed (first == last). ``corner_indices`` are positions of the four
    corners inside that loop.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray
    corner_indices: tuple

    def signed_areas(self) -> np.ndarray:
        return triangle_signed_areas(self.vertices, self.triangles)

    def edges(self) -> set:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return set(map(tuple, np.unique(e, axis=0).tolist()))

    @cached_property
    def diameter(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[self.boundary_loop] = True
        return mask

    @cached_property
    def locator(self) -> "PointLocator":
        return PointLocator(self.vertices, self.triangles)


def triangle_signed_areas(vertices, triangles) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                  - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def _fixed(x: float) -> str:
    # Triangle's switch parser has no exponent support
    s = f"{x:.20f}".rstrip("0")
    return s + "0" if s.endswith(".") else s


def triangulate(poly: Polygon, max_area: float | None = None,
                min_angle: float = DEFAULT_MIN_ANGLE,
                max_vertices: int = DEFAULT_MAX_VERTICES) -> TriMesh:
    """Quality constrained Delaunay triangulation of ``poly``.

    Parameters
    ----------
    poly : Polygon
    max_area : float, optional
        Upper bound on triangle area in polygon units. Defaults to
        ``poly.area / 2000``.
    min_angle : float
        Minimum angle (degrees) requested from the refiner.
    max_vertices : int
        Vertex budget; exceeding it raises ``RefinementFailure``.
    """
    area = poly.area
    if max_area is None:
        max_area = area / DEFAULT_AREA_DIVISOR
    if not max_area > 0:
        raise ValueError("max_area must be positive")
    if area / max_area > 2.0 * max_vertices:
        raise RefinementFailure(
            f"area/max_area = {area / max_area:.3g} exceeds the vertex budget")

    # refine in a unit-area frame so the switch string keeps its precision
    centre = poly.vertices.mean(axis=0)
    scale = np.sqrt(area)
    pts = (poly.vertices - centre) / scale
    n = poly.n
    seg = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    opts = f"pq{_fixed(min_angle)}a{_fixed(max_area / area)}Q"
    out = triangle.triangulate({"vertices": pts, "segments": seg}, opts)

    verts = out["vertices"] * scale + centre
    verts[:n] = poly.vertices
    tris = np.asarray(out["triangles"], dtype=np.int64)
    if len(verts) > max_vertices:
        raise RefinementFailure(
            f"refinement produced {len(verts)} vertices (budget {max_vertices})")

    # orient every triangle counterclockwise
    sa = triangle_signed_areas(verts, tris)
    flip = sa < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    if np.any(sa == 0):
        raise RefinementFailure("refinement produced a degenerate triangle")

    loop = _boundary_loop(tris, n)
    pos = {int(v): i for i, v in enumerate(loop[:-1])}
    try:
        corner_idx = tuple(pos[c] for c in poly.corners)
    except KeyError as exc:
        raise RefinementFailure("corner vertex missing from boundary") from exc
    originals = [pos.get(i, -1) for i in range(n)]
    if min(originals) < 0 or originals != sorted(originals):
        raise RefinementFailure("boundary loop does not follow polygon order")
    return TriMesh(vertices=verts, triangles=tris, boundary_loop=loop,
                   corner_indices=corner_idx)


def _boundary_loop(tris: np.ndarray, n_input: int) -> np.ndarray:
    """Boundary vertices in polygon (clockwise) order starting at vertex 0."""
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = directed[counts[inv.ravel()] == 1]
    # counterclockwise boundary edge (a, b) means b -> a in polygon order
    step = {int(b): int(a) for a, b in bnd}
    if len(step) != len(bnd):
        raise RefinementFailure("boundary is not a single manifold loop")
    loop = [0]
    while True:
        nxt = step.get(loop[-1])
        if nxt is None:
            raise RefinementFailure("open boundary loop")
        loop.append(nxt)
        if nxt == 0:
            break
        if len(loop) > len(step) + 1:
            raise RefinementFailure("boundary loop does not close")
    if len(loop) - 1 != len(step):
        raise RefinementFailure("mesh boundary has more than one component")
    return np.asarray(loop, dtype=np.int64)


class PointLocator:
    """Uniform-grid bucketed point location over a triangle soup.

    Each triangle is registered in every grid cell its (slightly padded)
    bounding box touches; a query tests the candidates of its cell and keeps
    the triangle whose worst edge distance is largest, so points on shared
    edges resolve deterministically. Queries are vectorized.
    """

    def __init__(self, vertices, triangles, eps_rel: float = 1e-9):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        self.eps = eps_rel * float(np.hypot(*(hi - lo)))

        tv = self.vertices[self.triangles]  # (t, 3, 2)
        tlo = tv.min(axis=1) - self.eps
        thi = tv.max(axis=1) + self.eps
        ext = np.maximum(thi - tlo, 1e-300)
        size = np.median(ext, axis=0)
        span = np.maximum(hi - lo, 1e-300)
        ncell = np.clip(np.ceil(span / size), 1, 2048).astype(int)
        self.lo = lo - self.eps
        self.cell = (span + 2 * self.eps) / ncell
        self.ncell = ncell

        i0 = self._cell_of(tlo)
        i1 = self._cell_of(thi)
        wx = i1[:, 0] - i0[:, 0] + 1
        wy = i1[:, 1] - i0[:, 1] + 1
        counts = wx * wy
        tri_id = np.repeat(np.arange(len(counts)), counts)
        k = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        cx = i0[tri_id, 0] + k % wx[tri_id]
        cy = i0[tri_id, 1] + k // wx[tri_id]
        cid = cy * ncell[0] + cx
        order = np.argsort(cid, kind="stable")
        self._items = tri_id[order]
        self._ptr = np.searchsorted(cid[order], np.arange(ncell[0] * ncell[1] + 1))

        a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
        self._a = a
        self._e1 = b - a
        self._e2 = c - a
        det = self._e1[:, 0] * self._e2[:, 1] - self._e1[:, 1] * self._e2[:, 0]
        self._det = det
        # altitude factors turn barycentric weights into edge distances
        lens = np.stack([np.hypot(*(c - b).T), np.hypot(*(a - c).T),
                         np.hypot(*(b - a).T)], axis=1)
        self._alt = np.abs(det)[:, None] / np.maximum(lens, 1e-300)

    def _cell_of(self, pts):
        idx = np.floor((pts - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.ncell - 1)

    def barycentric(self, tri_ids, pts):
        d = pts - self._a[tri_ids]
        e1 = self._e1[tri_ids]
        e2 = self._e2[tri_ids]
        det = self._det[tri_ids]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def locate(self, pts, strict: bool = True):
        """Locate points.

        Returns ``(tri, bary)``; ``tri`` is -1 for points outside the mesh
        unless ``strict`` is set, in which case ``PointOutsideMesh`` is raised.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        m = len(pts)
        best_tri = np.full(m, -1, dtype=np.int64)
        best_score = np.full(m, -np.inf)
        best_bary = np.zeros((m, 3))
        cell = self._cell_of(pts)
        cid = cell[:, 1] * self.ncell[0] + cell[:, 0]
        start = self._ptr[cid]
        cnt = self._ptr[cid + 1] - start
        kmax = int(cnt.max()) if m else 0
        for k in range(kmax):
            act = np.nonzero(cnt > k)[0]
            tri = self._items[start[act] + k]
            bary = self.barycentric(tri, pts[act])
            score = (bary * self._alt[tri]).min(axis=1)
            better = score > best_score[act]
            sel = act[better]
            best_score[sel] = score[better]
            best_tri[sel] = tri[better]
            best_bary[sel] = bary[better]
        outside = best_score < -self.eps
        if outside.any():
            if strict:
                bad = pts[np.argmax(outside)]
                raise PointOutsideMesh(
                    f"{int(outside.sum())} point(s) outside the mesh, e.g. {bad.tolist()}")
            best_tri[outside] = -1
        return best_tri, best_bary

    def interpolate(self, values, pts, strict: bool = True):
        """Piecewise-linear interpolation of per-vertex ``values`` at ``pts``."""
        tri, bary = self.locate(pts, strict=strict)
        vals = np.asarray(values)
        ok = tri >= 0
        out = np.full((len(tri),) + vals.shape[1:], np.nan)
        corners = vals[self.triangles[tri[ok]]]  # (k, 3, ...)
        out[ok] = np.einsum("kj,kj...->k...", bary[ok], corners)
        return out


def locate_triangle(mesh: TriMesh, p):
    """Containing triangle id and barycentric weights for a single point."""
    tri, bary = mesh.locator.locate(np.asarray(p, dtype=float)[None, :])
    return int(tri[0]), bary[0]
