"""Per-pixel geometric labels derived from conceptual text regions.

A label map has six channels: text, r_k, r_e, alpha, q1, q2. For every
pixel inside a text instance the offset to the text kernel ``v_k`` and to
the text edge ``v_e`` are computed in the CTR rectangle, pulled back through
the inverse harmonic map, and stored as two radii plus a direction encoded
by its reference angle and two quadrant bits.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CtrError, ZeroVector
from .geom import Polygon, points_in_polygon
from .harmonic import Ctr, CtrConfig, build_ctr

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
HALF_PI = 0.5 * np.pi
CHANNELS = ("text", "r_k", "r_e", "alpha", "q1", "q2")
BACKGROUND = np.array([0.0, -1.0, -1.0, -1.0, -1.0, -1.0])


@dataclass
class GeoFeatureMap:
    """Six-channel per-pixel map, shape (6, H, W); row 0 is the image top."""

    data: np.ndarray

    @classmethod
    def background(cls, height: int, width: int) -> "GeoFeatureMap":
        data = np.empty((6, height, width))
        data[:] = BACKGROUND[:, None, None]
        return cls(data)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def channel(self, name: str) -> np.ndarray:
        if name not in CHANNELS:
            raise KeyError(f"unknown channel {name!r}")
        return self.data[CHANNELS.index(name)]

    text = property(lambda self: self.data[0])
    r_k = property(lambda self: self.data[1])
    r_e = property(lambda self: self.data[2])
    alpha = property(lambda self: self.data[3])
    q1 = property(lambda self: self.data[4])
    q2 = property(lambda self: self.data[5])

    def copy(self) -> "GeoFeatureMap":
        return GeoFeatureMap(self.data.copy())


def pixel_centers(rows, cols, height: int) -> np.ndarray:
    """Internal-frame (y-up) coordinates of pixel centers."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    return np.stack([cols + 0.5, height - rows - 0.5], axis=-1)


# -- angle codecs -----------------------------------------------------------

def _wrap(theta):
    t = np.mod(theta, TWO_PI)
    return np.where(t >= TWO_PI, 0.0, t)


def encode_angle(theta):
    """Reference angle and quadrant bits: returns ``(alpha, q1, q2)``.

    ``theta == (-1)**q1 * alpha + (q1 + q2) * pi`` modulo 2 pi, with alpha in
    [0, pi/2]. Opposite directions share the same alpha.
    """
    t = _wrap(np.asarray(theta, dtype=float))
    k = np.clip(np.floor(t / HALF_PI), 0, 3).astype(int)
    alpha = np.choose(k, [t, np.pi - t, t - np.pi, TWO_PI - t])
    q1 = (k % 2).astype(float)
    q2 = (k >= 2).astype(float)
    if np.ndim(theta) == 0:
        return float(alpha), int(q1), int(q2)
    return alpha, q1, q2


def decode_angle(alpha, q1, q2):
    q1 = np.asarray(q1)
    q2 = np.asarray(q2)
    sign = np.where(q1 > 0, -1.0, 1.0)
    theta = _wrap(sign * np.asarray(alpha, dtype=float) + (q1 + q2) * np.pi)
    return float(theta) if np.ndim(theta) == 0 else theta


def encode_sincos(theta):
    return np.sin(theta), np.cos(theta)


def decode_sincos(s, c):
    s = np.asarray(s, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any((s == 0) & (c == 0)):
        raise ZeroVector("cannot decode an angle from (0, 0)")
    theta = _wrap(np.arctan2(s, c))
    return float(theta) if np.ndim(theta) == 0 else theta


# -- geometry inside the CTR -----------------------------------------------

@dataclass(frozen=True)
class KernelGeometry:
    """Text kernel inside a ``w_c`` x ``h_c`` CTR (a segment or a point)."""

    w_c: float
    h_c: float
    start: tuple
    end: tuple

    @property
    def is_point(self) -> bool:
        return self.start == self.end


def kernel_segment(w_c: float, h_c: float) -> KernelGeometry:
    y = h_c / 2.0
    if h_c < w_c:
        return KernelGeometry(w_c, h_c, (h_c / 2.0, y), (w_c - h_c / 2.0, y))
    return KernelGeometry(w_c, h_c, (w_c / 2.0, y), (w_c / 2.0, y))


def offsets_in_ctr(p, kg: KernelGeometry):
    """Kernel and edge offsets of CTR point(s) ``p``.

    Returns ``(v_k, v_e, p_k, p_e)``. The edge point is where the ray from
    the nearest kernel point through ``p`` leaves the rectangle; when ``p``
    lies on the kernel the ray points straight down.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    pk = np.empty_like(p)
    pk[:, 0] = np.clip(p[:, 0], kg.start[0], kg.end[0])
    pk[:, 1] = kg.start[1]
    d = p - pk
    norm = np.hypot(d[:, 0], d[:, 1])
    degenerate = norm <= 1e-12 * max(kg.w_c, kg.h_c)
    d[degenerate] = (0.0, -1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(d[:, 0] > 0, (kg.w_c - pk[:, 0]) / d[:, 0],
                      np.where(d[:, 0] < 0, -pk[:, 0] / d[:, 0], np.inf))
        ty = np.where(d[:, 1] > 0, (kg.h_c - pk[:, 1]) / d[:, 1],
                      np.where(d[:, 1] < 0, -pk[:, 1] / d[:, 1], np.inf))
    t = np.minimum(tx, ty)
    pe = pk + t[:, None] * d
    pe[:, 0] = np.clip(pe[:, 0], 0.0, kg.w_c)
    pe[:, 1] = np.clip(pe[:, 1], 0.0, kg.h_c)
    return pk - p, pe - p, pk, pe


@dataclass
class PulledOffsets:
    r_k: np.ndarray
    r_e: np.ndarray
    theta: np.ndarray
    # angle between v_k and -v_e before the colinear approximation
    deviation: np.ndarray


def pull_back_offsets(ctr: Ctr, p) -> PulledOffsets:
    """Offsets of polygon point(s) ``p`` pulled back from the CTR.

    ``v_k = H^-1(p_k') - p`` and ``v_e = H^-1(p_e') - p`` (``H^-1(p') = p``
    by bijectivity). ``v_e`` is then replaced by ``-r_e`` along the
    direction of ``v_k``. Where ``v_k`` vanishes the direction of ``-v_e``
    is used instead.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    kg = kernel_segment(ctr.w_c, ctr.h_c)
    p_ctr = ctr.to_ctr(p)
    _, _, pk, pe = offsets_in_ctr(p_ctr, kg)
    both = ctr.from_ctr(np.concatenate([pk, pe]))
    vk = both[: len(p)] - p
    ve = both[len(p):] - p
    r_k = np.hypot(vk[:, 0], vk[:, 1])
    r_e = np.hypot(ve[:, 0], ve[:, 1])
    theta_k = np.arctan2(vk[:, 1], vk[:, 0])
    theta_e = np.arctan2(-ve[:, 1], -ve[:, 0])
    scale = np.sqrt(ctr.w_c * ctr.h_c)
    tiny = r_k <= 1e-9 * scale
    theta = _wrap(np.where(tiny, theta_e, theta_k))
    dev = np.abs(np.angle(np.exp(1j * (theta_k - theta_e))))
    dev = np.where(tiny | (r_e <= 1e-9 * scale), 0.0, dev)
    return PulledOffsets(r_k=r_k, r_e=r_e, theta=theta, deviation=dev)


# -- rasterization ------------------------------------------------------------

@dataclass
class InstanceReport:
    index: int
    ok: bool
    error: str | None = None
    w_c: float | None = None
    h_c: float | None = None
    flipped: int | None = None
    n_vertices: int | None = None
    n_triangles: int | None = None
    n_pixels: int = 0
    mean_deviation: float | None = None
    max_deviation: float | None = None
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def instance_labels(poly: Polygon, height: int, width: int, config: CtrConfig | None = None):
    """Labels of one polygon: ``(rows, cols, values (n, 6), report, ctr)``."""
    t0 = time.perf_counter()
    ctr = build_ctr(poly, config)
    x0, y0, x1, y1 = poly.bounds
    c0 = max(int(np.floor(x0 - 0.5)), 0)
    c1 = min(int(np.ceil(x1 - 0.5)), width - 1)
    r0 = max(int(np.floor(height - y1 - 0.5)), 0)
    r1 = min(int(np.ceil(height - y0 - 0.5)), height - 1)
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    rr, cc = rr.ravel(), cc.ravel()
    centers = pixel_centers(rr, cc, height)
    inside = points_in_polygon(poly, centers)
    rr, cc, centers = rr[inside], cc[inside], centers[inside]
    values = np.zeros((len(rr), 6))
    dev = np.zeros(0)
    if len(rr):
        off = pull_back_offsets(ctr, centers)
        alpha, q1, q2 = encode_angle(off.theta)
        values[:] = np.column_stack([np.ones(len(rr)), off.r_k, off.r_e, alpha, q1, q2])
        dev = off.deviation
    t1 = time.perf_counter()
    mesh = ctr.unit_map.mesh
    report = InstanceReport(
        index=-1, ok=True, w_c=ctr.w_c, h_c=ctr.h_c, flipped=ctr.report.flipped,
        n_vertices=len(mesh.vertices), n_triangles=len(mesh.triangles),
        n_pixels=int(len(rr)),
        mean_deviation=float(dev.mean()) if len(dev) else None,
        max_deviation=float(dev.max()) if len(dev) else None,
        timings={**ctr.timings, "total": t1 - t0},
    )
    return rr, cc, values, report, ctr


def rasterize_labels(height: int, width: int, instances, config: CtrConfig | None = None):
    """Rasterize label maps for a list of polygons (internal frame).

    Later instances overwrite earlier ones where they overlap. An instance
    whose CTR cannot be built is skipped and reported.

    Returns
    -------
    (GeoFeatureMap, list[InstanceReport])
    """
    fmap = GeoFeatureMap.background(height, width)
    reports = []
    for i, poly in enumerate(instances):
        try:
            rr, cc, values, rep, _ = instance_labels(poly, height, width, config)
        except CtrError as exc:
            log.warning("instance %d skipped: %s", i, exc)
            reports.append(InstanceReport(index=i, ok=False, error=f"{type(exc).__name__}: {exc}"))
            continue
        rep.index = i
        fmap.data[:, rr, cc] = values.T
        reports.append(rep)
    return fmap, reports
