"""``ctrtext`` command line: labels, detect, roundtrip, train-filter, eval, render.

Exit status is 0 on success, 1 on bad input (files, formats, geometry) and
2 on internal failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from io import BytesIO

import numpy as np

from . import io
from .errors import CtrError, FormatError
from .evalkit import EvalReport
from .harmonic import CtrConfig
from .labelgen import decode_angle, rasterize_labels
from .pipeline import filter_dataset, roundtrip, train_filter
from .postproc import DetectConfig, detect
from .svm import load_model, save_model
from .synth import CorpusConfig, NoiseConfig

log = logging.getLogger("ctrtext")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
SENTINEL_RGB = (255, 0, 255)
RENDER_CHANNELS = ("text", "r_k", "r_e", "alpha", "q1", "q2", "sin_theta", "cos_theta")


class InputError(Exception):
    pass


def _dump_json(path, doc) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        io.atomic_write(path, (text + "\n").encode())


def _ctr_config(args) -> CtrConfig:
    return CtrConfig(max_area=args.max_area, area_divisor=args.area_divisor,
                     fine_density=args.fine_density, min_angle=args.min_angle)


def _detect_config(args) -> DetectConfig:
    return DetectConfig(conf_thresh=args.conf, cls_thresh=args.cls, kernel_scale=args.kernel_scale,
                        min_area=args.min_area, min_support=args.min_support)


def _corpus_config(args) -> CorpusConfig:
    return CorpusConfig(n_instances=args.n_instances, seed=args.seed,
                        image_size=(args.image_height, args.image_width))


def _noise_config(args) -> NoiseConfig:
    return NoiseConfig(sigma_r=args.sigma_r, sigma_alpha=args.sigma_alpha, flip_prob=args.flip_prob,
                       conf_blur=args.conf_blur, spurious_blob_rate=args.blob_rate,
                       seed=args.noise_seed if args.noise_seed is not None else args.seed)


# -- commands -----------------------------------------------------------------------

def cmd_labels(args) -> int:
    height, width, polys = io.read_annotation(args.annotation)
    fmap, reports = rasterize_labels(height, width, polys, _ctr_config(args))
    io.write_feature_map(args.out, fmap)
    lines = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in reports)
    if args.diagnostics:
        io.atomic_write(args.diagnostics, lines.encode())
    else:
        sys.stderr.write(lines)
    failed = [r for r in reports if not r.ok]
    if failed:
        raise InputError(f"{len(failed)} instance(s) could not be labelled: {failed[0].error}")
    return EXIT_OK


def cmd_detect(args) -> int:
    fmap = io.read_feature_map(args.feature_map)
    model = load_model(args.model) if args.model else None
    cfg = _detect_config(args)
    res = detect(fmap, cfg, model)
    doc = {
        "image": {"width": fmap.width, "height": fmap.height},
        "config": asdict(cfg),
        "model": args.model,
        "detections": [d.to_dict(fmap.height) for d in res.instances],
    }
    _dump_json(args.out, doc)
    if args.debug_dump:
        cands = res.candidates
        kp = cands.kernel_points()
        dump = {
            **res.debug,
            "candidates": [
                {"row": int(r), "col": int(c), "kernel_point": [float(x), float(y)],
                 "height": float(2 * (rk + re)), "kernel_radius": float(rad), "cluster": int(lab)}
                for r, c, (x, y), rk, re, rad, lab in zip(
                    cands.rows, cands.cols, kp, cands.r_k, cands.r_e,
                    res.clustering.radii, res.clustering.labels)
            ],
        }
        _dump_json(args.debug_dump, dump)
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    model = load_model(args.model) if args.model else None
    corpus, noise = _corpus_config(args), _noise_config(args)
    rt = roundtrip(corpus, noise, _detect_config(args), model=model, threads=args.threads)
    doc = {"corpus": corpus.to_dict(), "noise": noise.to_dict(), "model": args.model,
           **rt.report.to_dict()}
    _dump_json(args.report, doc)
    if args.report not in (None, "-"):
        _dump_json(args.report + ".timings.json", rt.timings)
    print(rt.report.summary(), file=sys.stderr)
    return EXIT_OK


def cmd_train_filter(args) -> int:
    corpus, noise = _corpus_config(args), _noise_config(args)
    X, y = filter_dataset(corpus, noise, _detect_config(args), threads=args.threads)
    model, search = train_filter(X, y, k=args.folds, seed=args.seed)
    save_model(model, args.out)
    print(f"trained on {len(y)} detections ({int((y > 0).sum())} true, {int((y < 0).sum())} false); "
          f"best C={search.C:g} gamma={search.gamma:g}", file=sys.stderr)
    return EXIT_OK


def _load_pred_polygons(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return io.polygons_from_detections(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed detections: {exc}") from exc


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise InputError("--pred and --gt must list the same number of files")
    report = EvalReport(iou_thresh=args.iou)
    for pred_path, gt_path in zip(args.pred, args.gt):
        _, _, gts = io.read_annotation(gt_path)
        report.add_image(_load_pred_polygons(pred_path), gts, gt_path)
    _dump_json(args.out, report.to_dict())
    print(report.summary(), file=sys.stderr)
    return EXIT_OK


def render_rgb(fmap, channel: str) -> np.ndarray:
    """RGB image of one channel; undefined pixels get the sentinel colour."""
    if channel not in RENDER_CHANNELS:
        raise InputError(f"unknown channel {channel!r}; choose from {', '.join(RENDER_CHANNELS)}")
    text = fmap.text
    if channel in ("sin_theta", "cos_theta"):
        defined = fmap.alpha >= 0
        theta = decode_angle(np.clip(fmap.alpha, 0, np.pi / 2), (fmap.q1 >= 0.5).astype(float),
                             (fmap.q2 >= 0.5).astype(float))
        vals = np.sin(theta) if channel == "sin_theta" else np.cos(theta)
        lo, hi = -1.0, 1.0
    else:
        vals = fmap.channel(channel)
        if channel == "text":
            defined = np.ones(text.shape, dtype=bool)
            lo, hi = 0.0, 1.0
        else:
            defined = vals >= 0
            lo = 0.0
            if channel == "alpha":
                hi = np.pi / 2
            elif channel in ("q1", "q2"):
                hi = 1.0
            else:
                hi = float(vals[defined].max()) if defined.any() else 1.0
    g = np.clip((vals - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
    gray = np.round(g * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[~defined] = SENTINEL_RGB
    return rgb


def cmd_render(args) -> int:
    from PIL import Image

    fmap = io.read_feature_map(args.feature_map)
    rgb = render_rgb(fmap, args.channel)
    buf = BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    io.atomic_write(args.out, buf.getvalue())
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _add_ctr_flags(p):
    g = p.add_argument_group("CTR refinement")
    g.add_argument("--max-area", type=float, default=None,
                   help="max triangle area in px^2 (default: polygon area / --area-divisor)")
    g.add_argument("--area-divisor", type=float, default=2000.0)
    g.add_argument("--fine-density", action="store_true",
                   help="use a 1e-5 area bound on the unit-area-normalized polygon")
    g.add_argument("--min-angle", type=float, default=20.0)


def _add_detect_flags(p):
    g = p.add_argument_group("detection")
    g.add_argument("--conf", type=float, default=0.65, help="text confidence threshold")
    g.add_argument("--cls", type=float, default=0.5, help="quadrant bit threshold")
    g.add_argument("--kernel-scale", type=float, default=0.0)
    g.add_argument("--min-area", type=int, default=10, help="smallest instance mask kept (px)")
    g.add_argument("--min-support", type=int, default=10,
                   help="smallest kernel cluster kept (candidates)")


def _add_corpus_flags(p, blob_rate=0.0):
    g = p.add_argument_group("corpus and noise")
    g.add_argument("--n-instances", type=int, default=200)
    g.add_argument("--image-height", type=int, default=256)
    g.add_argument("--image-width", type=int, default=384)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-seed", type=int, default=None, help="default: --seed")
    g.add_argument("--sigma-r", type=float, default=0.0)
    g.add_argument("--sigma-alpha", type=float, default=0.0)
    g.add_argument("--flip-prob", type=float, default=0.0)
    g.add_argument("--conf-blur", type=float, default=0.0)
    g.add_argument("--blob-rate", type=float, default=blob_rate)
    g.add_argument("--threads", type=int, default=None, help="worker processes (default: CTRF_THREADS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrtext", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("labels", help="rasterize label maps from an annotation file")
    p.add_argument("annotation")
    p.add_argument("out", help="feature map file (.ctrf)")
    p.add_argument("--diagnostics", help="JSON-lines CTR diagnostics (default: stderr)")
    _add_ctr_flags(p)
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("detect", help="detect text polygons in a feature map")
    p.add_argument("feature_map")
    p.add_argument("--model", help="SVM filter model (JSON)")
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--debug-dump", help="write per-candidate kernel points and radii")
    _add_detect_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("roundtrip", help="corpus -> labels -> noise -> detect -> eval")
    p.add_argument("--report", default="-")
    p.add_argument("--model")
    _add_corpus_flags(p)
    _add_detect_flags(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("train-filter", help="grid-search an SVM false-positive filter")
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=5)
    _add_corpus_flags(p, blob_rate=3.0)
    _add_detect_flags(p)
    p.set_defaults(func=cmd_train_filter)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--pred", nargs="+", required=True, help="detections JSON files")
    p.add_argument("--gt", nargs="+", required=True, help="annotation JSON files, same order")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("-o", "--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="heat map PNG of one channel")
    p.add_argument("feature_map")
    p.add_argument("channel", choices=RENDER_CHANNELS)
    p.add_argument("out")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CtrError, InputError, OSError, ValueError) as exc:
        kind = type(exc).__name__ if isinstance(exc, CtrError) else "error"
        print(f"ctrtext {args.command}: {kind}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure")
        print(f"ctrtext {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
