"""Turn a (predicted) geometric feature map back into text polygons.

Pipeline: binarize -> cluster kernel points -> reconstruct full-height
regions -> per-instance features -> optional SVM filter -> polygons.
Pixel positions are handled in image coordinates (x right, y down, pixel
centres at +0.5); directions decoded from the map live in the y-up frame
and are flipped on the way in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage

from .errors import EmptyInstance, ModelFeatureMismatch
from .geom import Polygon, validate_polygon
from .labelgen import GeoFeatureMap, decode_angle

CONF_THRESH = 0.65
CLS_THRESH = 0.5


@dataclass
class Candidates:
    """Pixels that survived binarization, in row-major order."""

    rows: np.ndarray
    cols: np.ndarray
    conf: np.ndarray
    r_k: np.ndarray
    r_e: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    shape: tuple

    def __len__(self) -> int:
        return len(self.rows)

    def positions(self) -> np.ndarray:
        """Pixel centres in image coordinates (x, y)."""
        return np.column_stack([self.cols + 0.5, self.rows + 0.5])

    def direction(self) -> np.ndarray:
        """Unit vector of theta in image coordinates."""
        return np.column_stack([np.cos(self.theta), -np.sin(self.theta)])

    def kernel_points(self) -> np.ndarray:
        return self.positions() + self.r_k[:, None] * self.direction()

    def edge_points(self) -> np.ndarray:
        return self.positions() - self.r_e[:, None] * self.direction()


def binarize(fmap: GeoFeatureMap, conf_thresh: float = CONF_THRESH,
             cls_thresh: float = CLS_THRESH) -> Candidates:
    text = fmap.text
    rows, cols = np.nonzero(text >= conf_thresh)
    d = fmap.data[:, rows, cols]
    alpha = np.clip(d[3], 0.0, np.pi / 2)
    q1 = (d[4] >= cls_thresh).astype(float)
    q2 = (d[5] >= cls_thresh).astype(float)
    theta = np.asarray(decode_angle(alpha, q1, q2), dtype=float).reshape(-1)
    return Candidates(rows=rows, cols=cols, conf=d[0],
                      r_k=np.maximum(d[1], 0.0), r_e=np.maximum(d[2], 0.0),
                      alpha=alpha, theta=theta, shape=(fmap.height, fmap.width))


@dataclass
class Clustering:
    labels: np.ndarray  # per candidate, 0 = unclustered
    kernel_image: np.ndarray  # component labels of the stamped kernel map
    radii: np.ndarray  # stamp radius per candidate (px)
    n_clusters: int


def _disk_offsets(max_r: float):
    R = int(np.ceil(max_r))
    dy, dx = np.mgrid[-R:R + 1, -R:R + 1]
    d2 = (dx * dx + dy * dy).ravel()
    order = np.argsort(d2, kind="stable")
    return dx.ravel()[order], dy.ravel()[order], d2[order]


def cluster(cands: Candidates, kernel_scale: float = 0.0, connectivity: int = 8) -> Clustering:
    """Connected components of the kernel points.

    Each kernel point ``p + v_k`` is stamped on the pixel grid as a disk of
    radius ``kernel_scale * (2 r_k + 2 r_e)`` (a single pixel at scale 0);
    every candidate takes the component label found at its kernel pixel.
    Kernel points outside the image leave the candidate unclustered.
    """
    if not 0.0 <= kernel_scale < 1.0:
        raise ValueError("kernel_scale must lie in [0, 1)")
    H, W = cands.shape
    kimg = np.zeros((H, W), dtype=bool)
    n = len(cands)
    radii = kernel_scale * 2.0 * (cands.r_k + cands.r_e)
    if n == 0:
        return Clustering(np.zeros(0, dtype=np.int64), np.zeros((H, W), dtype=np.int64), radii, 0)
    kp = cands.kernel_points()
    kc = np.floor(kp[:, 0]).astype(np.int64)
    kr = np.floor(kp[:, 1]).astype(np.int64)
    valid = (kc >= 0) & (kc < W) & (kr >= 0) & (kr < H)
    kimg[kr[valid], kc[valid]] = True
    if kernel_scale > 0 and valid.any():
        dx, dy, d2 = _disk_offsets(radii[valid].max())
        r2 = radii[valid] ** 2
        cnt = np.searchsorted(d2, r2, side="right")
        idx = np.repeat(np.arange(len(cnt)), cnt)
        k = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        rr = kr[valid][idx] + dy[k]
        cc = kc[valid][idx] + dx[k]
        ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        kimg[rr[ok], cc[ok]] = True
    if connectivity == 8:
        structure = np.ones((3, 3), dtype=bool)
    elif connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    else:
        raise ValueError("connectivity must be 4 or 8")
    comp, ncomp = ndimage.label(kimg, structure=structure)
    labels = np.zeros(n, dtype=np.int64)
    labels[valid] = comp[kr[valid], kc[valid]]
    return Clustering(labels=labels, kernel_image=comp, radii=radii, n_clusters=int(ncomp))


def prune_clusters(labels: np.ndarray, min_support: int) -> np.ndarray:
    """Unlabel clusters with fewer than ``min_support`` member candidates."""
    labels = labels.copy()
    if min_support <= 1 or len(labels) == 0:
        return labels
    counts = np.bincount(labels)
    small = counts < min_support
    small[0] = False
    labels[small[labels]] = 0
    return labels


@dataclass
class Reconstruction:
    label_image: np.ndarray  # cluster id per pixel, 0 = background
    owner: np.ndarray  # index of the last candidate stamping each pixel, -1 = none


def reconstruct(cands: Candidates, labels: np.ndarray, step: float = 0.5) -> Reconstruction:
    """Stamp each clustered candidate's full-height segment with its cluster id.

    The segment runs from the edge point ``p_e`` through the kernel point
    ``p_k`` and on for ``r_k + r_e`` beyond it. Overlaps go to the later
    candidate in row-major order.
    """
    H, W = cands.shape
    owner = np.full((H, W), -1, dtype=np.int64)
    sel = np.nonzero(labels > 0)[0]
    if len(sel):
        pos = cands.positions()[sel]
        u = cands.direction()[sel]
        rk, re = cands.r_k[sel], cands.r_e[sel]
        # trim half a pixel at both ends so a pixel is stamped only when its
        # centre lies within the segment's extent, matching label generation
        length = 2.0 * (rk + re)
        trim = np.minimum(0.5, 0.5 * length)
        start = pos - (re - trim)[:, None] * u
        span = length - 2.0 * trim
        nsamp = np.ceil(span / step).astype(np.int64) + 1
        idx = np.repeat(np.arange(len(sel)), nsamp)
        k = np.arange(nsamp.sum()) - np.repeat(np.cumsum(nsamp) - nsamp, nsamp)
        t = np.where(nsamp[idx] > 1, k / np.maximum(nsamp[idx] - 1, 1), 0.0) * span[idx]
        pts = start[idx] + t[:, None] * u[idx]
        cc = np.floor(pts[:, 0]).astype(np.int64)
        rr = np.floor(pts[:, 1]).astype(np.int64)
        # the candidate's own pixel is always part of its stamp
        cc = np.concatenate([cc, cands.cols[sel]])
        rr = np.concatenate([rr, cands.rows[sel]])
        who = np.concatenate([sel[idx], sel])
        ok = (rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)
        np.maximum.at(owner, (rr[ok], cc[ok]), who[ok])
    label_image = np.zeros((H, W), dtype=np.int64)
    hit = owner >= 0
    label_image[hit] = labels[owner[hit]]
    return Reconstruction(label_image=label_image, owner=owner)


@dataclass
class InstanceFeatures:
    mean_confidence: float
    sigma_alpha: float
    aspect_ratio: float
    area: int
    mean_height: float  # mean of 2 (r_k + r_e)

    def vector(self) -> np.ndarray:
        return np.array([self.mean_confidence, self.sigma_alpha, self.aspect_ratio])


def instance_features(mask: np.ndarray, owner: np.ndarray, cands: Candidates,
                      cand_index: np.ndarray | None = None) -> InstanceFeatures:
    """Confidence, alpha spread and aspect ratio ``A / (4 mu^2)`` of a mask.

    Mask pixels that are candidates contribute their own values; pixels
    created only by reconstruction inherit the values of the candidate that
    stamped them.
    """
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise EmptyInstance("empty instance mask")
    if cand_index is None:
        cand_index = candidate_index(cands)
    src = cand_index[rows, cols]
    src = np.where(src >= 0, src, owner[rows, cols])
    if np.any(src < 0):
        raise ValueError("mask pixel without a generating candidate")
    height_half = cands.r_k[src] + cands.r_e[src]
    mu = float(height_half.mean())
    area = len(rows)
    aspect = area / (4.0 * mu * mu) if mu > 0 else float(area)
    return InstanceFeatures(mean_confidence=float(cands.conf[src].mean()),
                            sigma_alpha=float(cands.alpha[src].std()),
                            aspect_ratio=float(aspect), area=int(area),
                            mean_height=2.0 * mu)


def candidate_index(cands: Candidates) -> np.ndarray:
    idx = np.full(cands.shape, -1, dtype=np.int64)
    idx[cands.rows, cands.cols] = np.arange(len(cands))
    return idx


# -- contours -------------------------------------------------------------------

def _bridge_diagonals(m: np.ndarray) -> np.ndarray:
    """Fill one pixel of every 2x2 block whose two set pixels touch only at a corner."""
    m = m.copy()
    while True:
        a, b = m[:-1, :-1], m[:-1, 1:]
        c, d = m[1:, :-1], m[1:, 1:]
        diag = a & d & ~b & ~c
        anti = b & c & ~a & ~d
        if not (diag.any() or anti.any()):
            return m
        r, q = np.nonzero(diag)
        m[r, q + 1] = True
        r, q = np.nonzero(anti)
        m[r, q] = True


def trace_outline(mask: np.ndarray) -> np.ndarray:
    """Outer pixel-edge boundary of the largest component, image coordinates.

    The component is made 4-connected and hole free first, so the crack
    boundary is a single simple loop. Returned vertices run clockwise on
    screen, with collinear points removed.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyInstance("empty mask")
    m = _bridge_diagonals(m)
    comp, n = ndimage.label(m)
    if n > 1:
        sizes = np.bincount(comp.ravel())
        sizes[0] = 0
        m = comp == np.argmax(sizes)
    m = ndimage.binary_fill_holes(m)
    p = np.pad(m, 1)
    H, W = p.shape
    # directed crack edges with the region on the right (screen clockwise)
    edges = []
    r, c = np.nonzero(p[1:-1, 1:-1] & ~p[:-2, 1:-1])  # top edges
    edges.append(np.column_stack([c, r, c + 1, r]))
    r, c = np.nonzero(p[1:-1, 1:-1] & ~p[2:, 1:-1])  # bottom edges
    edges.append(np.column_stack([c + 1, r + 1, c, r + 1]))
    r, c = np.nonzero(p[1:-1, 1:-1] & ~p[1:-1, :-2])  # left edges
    edges.append(np.column_stack([c, r + 1, c, r]))
    r, c = np.nonzero(p[1:-1, 1:-1] & ~p[1:-1, 2:])  # right edges
    edges.append(np.column_stack([c + 1, r, c + 1, r + 1]))
    e = np.concatenate(edges)
    key = lambda x, y: int(y) * (W + 2) + int(x)  # noqa: E731
    nxt = {key(x0, y0): (x1, y1) for x0, y0, x1, y1 in e}
    start = (int(e[0, 0]), int(e[0, 1]))
    loop = [start]
    cur = start
    for _ in range(len(e)):
        cur = tuple(int(v) for v in nxt[key(*cur)])
        if cur == start:
            break
        loop.append(cur)
    pts = np.asarray(loop, dtype=float)
    # drop collinear vertices
    prev = np.roll(pts, 1, axis=0)
    nxtp = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (nxtp[:, 1] - pts[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxtp[:, 0] - pts[:, 0])
    return pts[cross != 0]


def mask_to_polygon(mask: np.ndarray, tolerance: float = 1.0) -> Polygon:
    """Traced and simplified outline of a mask, in the internal y-up frame.

    Corner indices of the result are nominal (evenly spaced); detections
    carry no reading-order annotation.
    """
    m = np.asarray(mask, dtype=bool)
    H = m.shape[0]
    outline = trace_outline(m)
    flipped = np.column_stack([outline[:, 0], H - outline[:, 1]])
    simple = shapely.Polygon(flipped).simplify(tolerance, preserve_topology=True)
    pts = np.asarray(simple.exterior.coords)[:-1]
    if len(pts) < 4 or not simple.is_valid:
        pts = flipped
    n = len(pts)
    corners = [0, n // 4, n // 2, (3 * n) // 4]
    if len(set(corners)) < 4:
        corners = [0, 1, 2, 3]
    return validate_polygon(pts, corners)


# -- full pipeline --------------------------------------------------------------

@dataclass
class DetectConfig:
    conf_thresh: float = CONF_THRESH
    cls_thresh: float = CLS_THRESH
    kernel_scale: float = 0.0
    connectivity: int = 8
    min_area: int = 10
    min_support: int = 10


@dataclass
class DetectedInstance:
    cluster_id: int
    mask: np.ndarray
    features: InstanceFeatures
    polygon: Polygon
    decision_value: float | None = None
    kept: bool = True

    def to_dict(self, height: int) -> dict:
        """JSON-ready record with the polygon in image coordinates."""
        v = self.polygon.vertices
        pts = np.column_stack([v[:, 0], height - v[:, 1]])
        return {
            "cluster_id": int(self.cluster_id),
            "points": pts.tolist(),
            "mean_confidence": self.features.mean_confidence,
            "sigma_alpha": self.features.sigma_alpha,
            "aspect_ratio": self.features.aspect_ratio,
            "area": self.features.area,
            "decision_value": self.decision_value,
            "kept": self.kept,
        }


@dataclass
class DetectionResult:
    instances: list
    candidates: Candidates
    clustering: Clustering
    reconstruction: Reconstruction
    debug: dict = field(default_factory=dict)

    @property
    def kept(self) -> list:
        return [d for d in self.instances if d.kept]


def filter_instances(instances, model=None):
    """Keep the instances the SVM classifies positive; pass-through without a model."""
    if model is None:
        for inst in instances:
            inst.kept = True
        return list(instances)
    if getattr(model, "n_features", 3) != 3:
        raise ModelFeatureMismatch(f"model expects {model.n_features} features, instances have 3")
    if not instances:
        return []
    from .svm import predict

    X = np.stack([inst.features.vector() for inst in instances])
    labels, values = predict(model, X)
    kept = []
    for inst, lab, val in zip(instances, labels, values):
        inst.decision_value = float(val)
        inst.kept = bool(lab > 0)
        if inst.kept:
            kept.append(inst)
    return kept


def detect(fmap: GeoFeatureMap, config: DetectConfig | None = None, model=None) -> DetectionResult:
    """Run the whole post-processing chain on one feature map."""
    config = config or DetectConfig()
    cands = binarize(fmap, config.conf_thresh, config.cls_thresh)
    cl = cluster(cands, config.kernel_scale, config.connectivity)
    labels = prune_clusters(cl.labels, config.min_support)
    rec = reconstruct(cands, labels)
    cidx = candidate_index(cands)
    instances = []
    ids = np.unique(rec.label_image)
    objs = ndimage.find_objects(rec.label_image)
    for cid in ids[ids > 0]:
        sl = objs[cid - 1]
        sub = rec.label_image[sl] == cid
        area = int(sub.sum())
        if area < config.min_area:
            continue
        mask = np.zeros(cands.shape, dtype=bool)
        mask[sl] = sub
        feats = instance_features(mask, rec.owner, cands, cidx)
        poly = mask_to_polygon(mask)
        instances.append(DetectedInstance(cluster_id=int(cid), mask=mask, features=feats, polygon=poly))
    filter_instances(instances, model)
    debug = {
        "n_candidates": len(cands),
        "n_kernel_components": cl.n_clusters,
        "kernel_scale": config.kernel_scale,
    }
    return DetectionResult(instances=instances, candidates=cands, clustering=cl,
                           reconstruction=rec, debug=debug)
