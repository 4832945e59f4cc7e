"""Harmonic-map text region rectification, label maps and detection post-processing."""

from .errors import CtrError
from .geom import Polygon, TriMesh, polygon_iou, triangulate, validate_polygon
from .harmonic import Ctr, CtrConfig, build_ctr, check_bijective, ctr_dims, solve_harmonic
from .labelgen import GeoFeatureMap, decode_angle, encode_angle, rasterize_labels
from .postproc import DetectConfig, detect
from .synth import CorpusConfig, NoiseConfig, generate_corpus, generate_ribbon, perturb

__version__ = "0.1.0"

__all__ = [
    "CorpusConfig", "Ctr", "CtrConfig", "CtrError", "DetectConfig", "GeoFeatureMap", "NoiseConfig",
    "Polygon", "TriMesh", "build_ctr", "check_bijective", "ctr_dims", "decode_angle", "detect",
    "encode_angle", "generate_corpus", "generate_ribbon", "perturb", "polygon_iou",
    "rasterize_labels", "solve_harmonic", "triangulate", "validate_polygon",
]
