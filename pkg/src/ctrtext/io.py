"""Annotation JSON and binary feature-map files.

Feature map layout (little endian)::

    b"CTRF" | u32 version=1 | u32 H | u32 W | u32 C=6 | C*H*W float32

Planes are row-major with row 0 at the image top, channel order
text, r_k, r_e, alpha, q1, q2.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CtrError, FormatError
from .geom import Polygon, validate_polygon
from .labelgen import GeoFeatureMap

MAGIC = b"CTRF"
VERSION = 1
HEADER = struct.Struct("<4sIIII")


def atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_feature_map(fmap: GeoFeatureMap) -> bytes:
    c, h, w = fmap.data.shape
    if c != 6:
        raise FormatError(f"feature map must have 6 channels, has {c}")
    body = np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()
    return HEADER.pack(MAGIC, VERSION, h, w, c) + body


def decode_feature_map(buf: bytes) -> GeoFeatureMap:
    if len(buf) < HEADER.size:
        raise FormatError("file too short for a feature-map header")
    magic, version, h, w, c = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported feature-map version {version}")
    if c != 6:
        raise FormatError(f"expected 6 channels, header says {c}")
    expected = HEADER.size + 4 * h * w * c
    if len(buf) != expected:
        raise FormatError(f"file size {len(buf)} does not match header ({expected})")
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(c, h, w)
    return GeoFeatureMap(data.astype(np.float64))


def write_feature_map(path, fmap: GeoFeatureMap) -> None:
    atomic_write(path, encode_feature_map(fmap))


def read_feature_map(path) -> GeoFeatureMap:
    with open(path, "rb") as f:
        return decode_feature_map(f.read())


def flip_y(points, height: float) -> np.ndarray:
    """Image <-> internal frame conversion (an involution)."""
    pts = np.array(points, dtype=float, copy=True)
    pts[:, 1] = height - pts[:, 1]
    return pts


def parse_annotation(doc: dict):
    """Validate an annotation document; returns (height, width, polygons)."""
    try:
        height = int(doc["image"]["height"])
        width = int(doc["image"]["width"])
        raw = doc["instances"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed annotation: {exc}") from exc
    if height <= 0 or width <= 0:
        raise FormatError("image dimensions must be positive")
    polys = []
    for k, inst in enumerate(raw):
        try:
            pts = np.asarray(inst["points"], dtype=float)
            corners = [int(c) for c in inst["corners"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"instance {k}: {exc}") from exc
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise FormatError(f"instance {k}: points must be [[x, y], ...]")
        if (pts < 0).any() or (pts[:, 0] > width).any() or (pts[:, 1] > height).any():
            raise FormatError(f"instance {k}: points outside the image")
        try:
            polys.append(validate_polygon(flip_y(pts, height), corners))
        except (CtrError, ValueError) as exc:
            raise FormatError(f"instance {k}: {type(exc).__name__}: {exc}") from exc
    return height, width, polys


def read_annotation(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return parse_annotation(doc)


def annotation_document(height: int, width: int, polygons) -> dict:
    return {
        "image": {"width": int(width), "height": int(height)},
        "instances": [
            {"points": flip_y(p.vertices, height).tolist(), "corners": list(map(int, p.corners))}
            for p in polygons
        ],
    }


def write_annotation(path, height: int, width: int, polygons) -> None:
    text = json.dumps(annotation_document(height, width, polygons), indent=1)
    atomic_write(path, text.encode())


def polygons_from_detections(doc: dict) -> list:
    """Polygons (internal frame) of the kept detections in a detections document."""
    height = int(doc["image"]["height"])
    out = []
    for det in doc["detections"]:
        if not det.get("kept", True):
            continue
        pts = flip_y(np.asarray(det["points"], dtype=float), height)
        n = len(pts)
        out.append(Polygon(vertices=pts, corners=(0, n // 4, n // 2, (3 * n) // 4)))
    return out
