"""Corpus-level orchestration: labels -> synthetic prediction -> detection -> evaluation."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .evalkit import EvalReport
from .harmonic import CtrConfig
from .labelgen import rasterize_labels
from .postproc import DetectConfig, detect
from .svm import C_GRID, GAMMA_GRID, build_filter_dataset, grid_search_cv, train_smo
from .synth import CorpusConfig, CorpusImage, NoiseConfig, generate_corpus, perturb

THREADS_ENV = "CTRF_THREADS"


def worker_count(n_tasks: int, threads: int | None = None) -> int:
    """Pool size, capped by ``threads`` or the CTRF_THREADS environment variable."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(threads), n_tasks))


def image_noise(noise: NoiseConfig, index: int) -> NoiseConfig:
    """Per-image noise config with a seed derived from (seed, index)."""
    seed = int(np.random.SeedSequence([noise.seed, index]).generate_state(1)[0])
    return replace(noise, seed=seed)


@dataclass
class ImageResult:
    index: int
    polygons: list  # kept detections, internal frame
    all_polygons: list  # every detection before filtering
    features: list  # feature vectors of every detection
    decision_values: list
    label_reports: list
    timings: dict = field(default_factory=dict)


def process_image(index: int, img: CorpusImage, noise: NoiseConfig, detect_cfg: DetectConfig,
                  model=None, ctr_cfg: CtrConfig | None = None) -> ImageResult:
    t0 = time.perf_counter()
    fmap, reports = rasterize_labels(img.height, img.width, img.polygons, ctr_cfg)
    t1 = time.perf_counter()
    pred = perturb(fmap, image_noise(noise, index))
    t2 = time.perf_counter()
    res = detect(pred, detect_cfg, model)
    t3 = time.perf_counter()
    return ImageResult(
        index=index,
        polygons=[d.polygon for d in res.kept],
        all_polygons=[d.polygon for d in res.instances],
        features=[d.features.vector().tolist() for d in res.instances],
        decision_values=[d.decision_value for d in res.instances],
        label_reports=[r.to_dict() for r in reports],
        timings={"labels": t1 - t0, "perturb": t2 - t1, "detect": t3 - t2},
    )


def _process(args):
    return process_image(*args)


def run_corpus(images, noise: NoiseConfig, detect_cfg: DetectConfig, model=None,
               ctr_cfg: CtrConfig | None = None, threads: int | None = None) -> list[ImageResult]:
    """Process every image; results come back in image order whatever the pool size."""
    tasks = [(k, img, noise, detect_cfg, model, ctr_cfg) for k, img in enumerate(images)]
    n = worker_count(len(tasks), threads)
    if n == 1:
        return [_process(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_process, tasks, chunksize=max(1, len(tasks) // (4 * n))))


@dataclass
class RoundTrip:
    report: EvalReport
    results: list
    timings: dict


def roundtrip(corpus: CorpusConfig, noise: NoiseConfig, detect_cfg: DetectConfig | None = None,
              model=None, ctr_cfg: CtrConfig | None = None, threads: int | None = None,
              images=None) -> RoundTrip:
    """Generate (or reuse) a corpus, run the pipeline and evaluate at IoU 0.5."""
    detect_cfg = detect_cfg or DetectConfig()
    t0 = time.perf_counter()
    if images is None:
        images = generate_corpus(corpus)
    t1 = time.perf_counter()
    results = run_corpus(images, noise, detect_cfg, model, ctr_cfg, threads)
    t2 = time.perf_counter()
    report = EvalReport(iou_thresh=0.5)
    for res, img in zip(results, images):
        report.add_image(res.polygons, img.polygons, res.index)
    t3 = time.perf_counter()
    stages = {"labels": 0.0, "perturb": 0.0, "detect": 0.0}
    for res in results:
        for key in stages:
            stages[key] += res.timings[key]
    timings = {"corpus": t1 - t0, "pipeline_wall": t2 - t1, "eval": t3 - t2, **stages}
    return RoundTrip(report=report, results=results, timings=timings)


def filter_dataset(corpus: CorpusConfig, noise: NoiseConfig, detect_cfg: DetectConfig | None = None,
                   ctr_cfg: CtrConfig | None = None, threads: int | None = None, images=None):
    """Unfiltered detections on a noisy corpus, labelled against ground truth."""
    detect_cfg = detect_cfg or DetectConfig()
    if images is None:
        images = generate_corpus(corpus)
    results = run_corpus(images, noise, detect_cfg, None, ctr_cfg, threads)
    dets = [list(zip(r.features, r.all_polygons)) for r in results]
    return build_filter_dataset(dets, [img.polygons for img in images])


def train_filter(samples, labels, C_grid=C_GRID, gamma_grid=GAMMA_GRID,
                 k: int = 5, seed: int = 0):
    """Grid search, then refit on all samples; the CV table is attached to the model."""
    search = grid_search_cv(samples, labels, C_grid, gamma_grid, k=k, seed=seed)
    model = train_smo(samples, labels, C=search.C, gamma=search.gamma)
    model.cv_table = search.table
    return model, search
