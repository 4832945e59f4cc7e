"""Synthetic stand-in for the segmentation network, plus corpus generation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import SelfIntersectingParams
from .geom import Polygon, validate_polygon
from .labelgen import GeoFeatureMap


@dataclass
class NoiseConfig:
    """Perturbation applied to a label map to imitate network output.

    sigma_r : Gaussian std (px) added to r_k and r_e.
    sigma_alpha : Gaussian std (rad) added to alpha, clamped to [0, pi/2].
    flip_prob : probability of inverting each quadrant bit.
    conf_blur : logistic temperature (px) softening the text channel.
    spurious_blob_rate : expected number of false-positive blobs per image.
    """

    sigma_r: float = 0.0
    sigma_alpha: float = 0.0
    flip_prob: float = 0.0
    conf_blur: float = 0.0
    spurious_blob_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_r", "sigma_alpha", "conf_blur", "spurious_blob_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


BLOB_RADIUS = (3.0, 7.0)
BLOB_MAX_OFFSET = 5.0
BLOB_CONFIDENCE = (0.65, 0.9)


def perturb(fmap: GeoFeatureMap, cfg: NoiseConfig) -> GeoFeatureMap:
    """Return a noisy copy of a crisp label map; deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    out = fmap.copy()
    d = out.data
    inside = fmap.text > 0.5
    n = int(inside.sum())

    if cfg.sigma_r > 0:
        d[1][inside] += rng.normal(0.0, cfg.sigma_r, n)
        d[2][inside] += rng.normal(0.0, cfg.sigma_r, n)
    if cfg.sigma_alpha > 0:
        d[3][inside] = np.clip(d[3][inside] + rng.normal(0.0, cfg.sigma_alpha, n), 0.0, np.pi / 2)
    if cfg.flip_prob > 0:
        for ch in (4, 5):
            flip = rng.random(n) < cfg.flip_prob
            vals = d[ch][inside]
            vals[flip] = 1.0 - vals[flip]
            d[ch][inside] = vals
    if cfg.conf_blur > 0:
        # logistic of the signed distance to the text boundary
        din = ndimage.distance_transform_edt(inside) - 0.5
        dout = ndimage.distance_transform_edt(~inside) - 0.5
        sd = np.where(inside, din, -dout)
        d[0] = 1.0 / (1.0 + np.exp(-sd / cfg.conf_blur))

    if cfg.spurious_blob_rate > 0:
        n_blobs = rng.poisson(cfg.spurious_blob_rate)
        occupied = ndimage.binary_dilation(inside, iterations=int(BLOB_RADIUS[1]) + 4)
        for _ in range(n_blobs):
            _add_blob(d, occupied, rng)
    return out


def _add_blob(d: np.ndarray, occupied: np.ndarray, rng, tries: int = 50) -> bool:
    """Paint one elliptic false-positive region with coherent random geometry."""
    H, W = occupied.shape
    for _ in range(tries):
        ax = rng.uniform(*BLOB_RADIUS)
        ay = rng.uniform(*BLOB_RADIUS)
        cx = rng.uniform(ax, W - ax)
        cy = rng.uniform(ay, H - ay)
        rot = rng.uniform(0, np.pi)
        r0, r1 = int(max(cy - 8, 0)), int(min(cy + 8, H - 1))
        c0, c1 = int(max(cx - 8, 0)), int(min(cx + 8, W - 1))
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        u = (cc + 0.5 - cx) * np.cos(rot) + (rr + 0.5 - cy) * np.sin(rot)
        v = -(cc + 0.5 - cx) * np.sin(rot) + (rr + 0.5 - cy) * np.cos(rot)
        m = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
        rr, cc = rr[m], cc[m]
        if len(rr) == 0 or occupied[rr, cc].any():
            continue
        k = len(rr)
        level = rng.uniform(*BLOB_CONFIDENCE)
        d[0][rr, cc] = np.clip(level + rng.normal(0, 0.02, k), *BLOB_CONFIDENCE)
        d[1][rr, cc] = rng.uniform(0, BLOB_MAX_OFFSET)
        d[2][rr, cc] = rng.uniform(0, BLOB_MAX_OFFSET)
        d[3][rr, cc] = rng.uniform(0, np.pi / 2)
        d[4][rr, cc] = float(rng.integers(0, 2))
        d[5][rr, cc] = float(rng.integers(0, 2))
        occupied[rr, cc] = True
        return True
    return False


def generate_ribbon(width: float, height: float, curvature: float = 0.0,
                    n_boundary_points: int = 14, seed: int | None = None) -> Polygon:
    """A rectangle of ``width`` x ``height`` bent along a circular arc.

    ``curvature`` is the signed angle (radians) subtended by the centre
    line; zero gives an axis-aligned rectangle centred at the origin.
    Half of the boundary points run along the top side and half along the
    bottom; ``seed`` jitters their spacing.
    """
    if not (width > 0 and height > 0):
        raise SelfIntersectingParams("width and height must be positive")
    phi = float(curvature)
    if abs(phi) >= 2 * np.pi:
        raise SelfIntersectingParams("arc would overlap itself")
    if abs(phi) >= 1e-9 and width / abs(phi) <= height / 2:
        raise SelfIntersectingParams("inner radius would be non-positive")
    k = max(n_boundary_points // 2, 2)
    s = np.linspace(0.0, 1.0, k)
    if seed is not None and k > 2:
        rng = np.random.default_rng(seed)
        step = 1.0 / (k - 1)
        s[1:-1] += rng.uniform(-0.3, 0.3, k - 2) * step
    if abs(phi) < 1e-9:
        x = (s - 0.5) * width
        top = np.column_stack([x, np.full(k, height / 2)])
        bot = np.column_stack([x, np.full(k, -height / 2)])
    else:
        R = width / abs(phi)
        beta = (s - 0.5) * abs(phi)
        normal = np.column_stack([np.sin(beta), np.cos(beta)])
        centre = np.column_stack([R * np.sin(beta), R * np.cos(beta) - R])
        top = centre + normal * height / 2
        bot = centre - normal * height / 2
        if phi < 0:
            top[:, 1] *= -1
            bot[:, 1] *= -1
            top, bot = bot, top
    pts = np.concatenate([top, bot[::-1]])
    try:
        return validate_polygon(pts, [0, k - 1, k, 2 * k - 1])
    except ValueError as exc:
        raise SelfIntersectingParams(str(exc)) from exc


def place(poly: Polygon, angle: float, offset) -> Polygon:
    """Rotate about the origin and translate."""
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return Polygon(vertices=poly.vertices @ rot.T + np.asarray(offset, dtype=float),
                   corners=poly.corners)


@dataclass
class CorpusConfig:
    """Random images of non-overlapping text ribbons (internal y-up frame)."""

    n_instances: int = 200
    image_size: tuple = (256, 384)  # (height, width)
    max_per_image: int = 4
    height_range: tuple = (16.0, 36.0)
    aspect_range: tuple = (2.0, 8.0)
    max_curvature: float = np.pi
    min_inner_radius: float = 2.0  # inner arc radius, in units of ribbon height
    max_rotation: float = np.pi / 6
    kinds: tuple = ("rectangle", "rotated", "curved")
    n_boundary_points: int = 14
    min_gap: float = 8.0
    margin: float = 3.0
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_size"] = list(self.image_size)
        return out


@dataclass
class CorpusImage:
    height: int
    width: int
    polygons: list = field(default_factory=list)


def random_instance(rng, cfg: CorpusConfig) -> Polygon:
    kind = cfg.kinds[rng.integers(len(cfg.kinds))]
    h = rng.uniform(*cfg.height_range)
    w = h * rng.uniform(*cfg.aspect_range)
    curv = 0.0
    angle = 0.0
    if kind == "rotated":
        angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
    elif kind == "curved":
        # bound the bend so the inner radius stays >= min_inner_radius * h
        limit = min(cfg.max_curvature, w / (h * (0.5 + cfg.min_inner_radius)))
        curv = rng.uniform(min(0.2, limit), limit) * rng.choice([-1.0, 1.0])
        angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation)
    base = generate_ribbon(w, h, curv, cfg.n_boundary_points, seed=int(rng.integers(2**31)))
    return place(base, angle, (0.0, 0.0))


def generate_corpus(cfg: CorpusConfig) -> list[CorpusImage]:
    """Images until ``cfg.n_instances`` polygons are placed; pure in ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    H, W = cfg.image_size
    images = []
    total = 0
    while total < cfg.n_instances:
        img = CorpusImage(H, W)
        want = min(cfg.max_per_image, cfg.n_instances - total)
        for _ in range(want * 30):
            if len(img.polygons) >= want:
                break
            poly = random_instance(rng, cfg)
            x0, y0, x1, y1 = poly.bounds
            if x1 - x0 > W - 2 * cfg.margin or y1 - y0 > H - 2 * cfg.margin:
                continue
            dx = rng.uniform(cfg.margin - x0, W - cfg.margin - x1)
            dy = rng.uniform(cfg.margin - y0, H - cfg.margin - y1)
            cand = place(poly, 0.0, (dx, dy))
            if any(cand.shape.distance(p.shape) < cfg.min_gap for p in img.polygons):
                continue
            img.polygons.append(cand)
        if img.polygons:
            images.append(img)
            total += len(img.polygons)
    return images
