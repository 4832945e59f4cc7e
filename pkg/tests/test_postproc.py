import numpy as np
import pytest
import shapely

from ctrtext.errors import EmptyInstance, ModelFeatureMismatch
from ctrtext.geom import polygon_iou
from ctrtext.labelgen import GeoFeatureMap, pixel_centers, rasterize_labels
from ctrtext.postproc import (
    Candidates,
    DetectConfig,
    binarize,
    candidate_index,
    cluster,
    detect,
    filter_instances,
    instance_features,
    mask_to_polygon,
    prune_clusters,
    reconstruct,
)
from ctrtext.svm import SvmModel

from .helpers import rect

PI = np.pi


def one_pixel_map(text=1.0, q1=0.0, q2=0.0, alpha=0.3):
    fmap = GeoFeatureMap.background(5, 5)
    fmap.data[:, 2, 2] = [text, 1.0, 1.0, alpha, q1, q2]
    return fmap


def test_binarize_thresholds():
    assert len(binarize(one_pixel_map(text=0.64))) == 0
    assert len(binarize(one_pixel_map(text=0.66))) == 1
    c = binarize(one_pixel_map(q1=0.5, alpha=0.3))
    assert c.theta[0] == pytest.approx(PI - 0.3)
    assert len(binarize(GeoFeatureMap.background(7, 9))) == 0


def test_binarize_clamps_alpha():
    c = binarize(one_pixel_map(alpha=2.0))
    assert c.alpha[0] == pytest.approx(PI / 2)


def _two_rects():
    return [rect(10, 70, 110, 102), rect(10, 10, 110, 30)]


def test_two_rectangles_two_clusters():
    fmap, _ = rasterize_labels(120, 130, _two_rects())
    cands = binarize(fmap)
    cl = cluster(cands)
    assert cl.n_clusters == 2
    assert (cl.labels > 0).all()


def test_one_rectangle_single_cluster():
    fmap, _ = rasterize_labels(64, 64, [rect(0, 16, 64, 48)])
    cands = binarize(fmap)
    cl = cluster(cands)
    assert cl.n_clusters == 1
    assert set(np.unique(cl.labels)) == {1}


def test_kernel_scale_radius():
    fmap, _ = rasterize_labels(64, 64, [rect(0, 16, 64, 48)])
    cands = binarize(fmap)
    cl = cluster(cands, kernel_scale=0.2)
    # h = 2 (r_k + r_e) = 32 off the caps
    mid = (cands.cols > 20) & (cands.cols < 44)
    assert cl.radii[mid] == pytest.approx(6.4)
    # the stamped disk reaches 6 rows either side of the kernel row
    kernel_rows = np.nonzero((cl.kernel_image > 0).any(axis=1))[0]
    assert kernel_rows.min() <= 31 - 6 and kernel_rows.max() >= 32 + 6
    with pytest.raises(ValueError):
        cluster(cands, kernel_scale=1.0)


def test_cluster_drops_kernel_outside_image():
    fmap = one_pixel_map()
    fmap.data[1, 2, 2] = 50.0
    cl = cluster(binarize(fmap))
    assert cl.labels.tolist() == [0]


def test_prune_clusters():
    labels = np.array([1, 1, 1, 2, 0, 3, 3])
    assert prune_clusters(labels, 2).tolist() == [1, 1, 1, 0, 0, 3, 3]
    assert prune_clusters(labels, 1).tolist() == labels.tolist()


def _candidates(rows, cols, r_k, r_e, theta, shape):
    n = len(rows)
    return Candidates(rows=np.asarray(rows), cols=np.asarray(cols), conf=np.ones(n),
                      r_k=np.asarray(r_k, float), r_e=np.asarray(r_e, float),
                      alpha=np.zeros(n), theta=np.asarray(theta, float), shape=shape)


def test_segment_endpoints_span_full_height():
    # pixel centre (31.5, 24.5) in the y-up frame of a 64-px image
    c = _candidates([39], [31], [8.0], [8.0], [PI / 2], (64, 64))
    assert c.edge_points()[0] == pytest.approx([31.5, 47.5])
    far = c.kernel_points() + 8.0 * (c.kernel_points() - c.edge_points()) / 8.0
    assert far[0] == pytest.approx([31.5, 15.5])
    rec = reconstruct(c, np.array([1]))
    rows = np.nonzero(rec.label_image[:, 31])[0]
    assert rows.tolist() == list(range(16, 48))
    assert rec.label_image.sum() == 32


def test_zero_length_segment_is_own_pixel():
    c = _candidates([3], [4], [0.0], [0.0], [0.0], (8, 8))
    rec = reconstruct(c, np.array([1]))
    assert np.argwhere(rec.label_image).tolist() == [[3, 4]]


def test_reconstruction_last_writer_wins_and_covers_candidates():
    c = _candidates([5, 5], [2, 6], [2.0, 2.0], [2.0, 2.0], [0.0, PI], (10, 10))
    rec = reconstruct(c, np.array([1, 2]))
    # both segments span x in [1, 8] on row 5; candidate 1 is later
    assert rec.label_image[5, 1:9].tolist() == [2] * 8
    assert rec.label_image.sum() == 16
    assert (rec.label_image[c.rows, c.cols] > 0).all()


def test_rectangle_reconstruction_matches_region():
    fmap, _ = rasterize_labels(64, 80, [rect(8, 16, 72, 48)])
    cands = binarize(fmap)
    rec = reconstruct(cands, cluster(cands).labels)
    m, t = rec.label_image > 0, fmap.text > 0
    assert (m & t).sum() / (m | t).sum() >= 0.95


def _rect_aspect_oracle(x0, y0, x1, y1, height):
    """Area-over-mean-height aspect of an axis-aligned rectangle, by direct ray casting."""
    w, h = x1 - x0, y1 - y0
    rows, cols = np.mgrid[0:height, 0:int(np.ceil(x1)) + 1]
    p = pixel_centers(rows.ravel(), cols.ravel(), height)
    inside = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
    p = p[inside]
    yk = (y0 + y1) / 2
    lo, hi = (x0 + h / 2, x1 - h / 2) if h < w else ((x0 + x1) / 2, (x0 + x1) / 2)
    pk = np.column_stack([np.clip(p[:, 0], lo, hi), np.full(len(p), yk)])
    total = []
    for a, b in zip(pk, p):
        d = b - a
        if np.hypot(*d) < 1e-12:
            d = np.array([0.0, -1.0])
        ts = []
        for k, (lo_b, hi_b) in enumerate([(x0, x1), (y0, y1)]):
            if d[k] > 0:
                ts.append((hi_b - a[k]) / d[k])
            elif d[k] < 0:
                ts.append((lo_b - a[k]) / d[k])
        total.append(min(ts) * np.hypot(*d))
    mu = float(np.mean(total))
    return len(p) / (4 * mu * mu), mu


def test_instance_features_rectangle_oracle():
    fmap, _ = rasterize_labels(64, 64, [rect(0, 16, 64, 48)])
    res = detect(fmap)
    assert len(res.instances) == 1
    f = res.instances[0].features
    expect, mu = _rect_aspect_oracle(0, 16, 64, 48, 64)
    assert f.area == 2048
    assert f.mean_height / 2 == pytest.approx(mu, rel=1e-6)
    assert f.aspect_ratio == pytest.approx(expect, rel=1e-6)
    assert f.mean_confidence == 1.0


def test_instance_features_constant_alpha():
    fmap, _ = rasterize_labels(64, 64, [rect(0, 16, 64, 48)])
    fmap.data[3][fmap.text > 0] = 0.7
    fmap.data[0][fmap.text > 0] = 0.9
    f = detect(fmap).instances[0].features
    assert f.sigma_alpha == pytest.approx(0.0, abs=1e-12)
    assert f.mean_confidence == pytest.approx(0.9)


def test_instance_features_empty():
    c = _candidates([1], [1], [1], [1], [0], (4, 4))
    with pytest.raises(EmptyInstance):
        instance_features(np.zeros((4, 4), bool), np.full((4, 4), -1), c, candidate_index(c))


def test_mask_to_polygon_square_and_pixel():
    m = np.zeros((20, 20), bool)
    m[5:15, 3:13] = True
    poly = mask_to_polygon(m)
    assert poly.n == 4
    box = shapely.box(3, 20 - 15, 13, 20 - 5)
    assert shapely.hausdorff_distance(poly.shape, box) <= 1.0
    one = np.zeros((6, 6), bool)
    one[2, 3] = True
    poly = mask_to_polygon(one)
    assert poly.shape.equals(shapely.box(3, 3, 4, 4))
    with pytest.raises(EmptyInstance):
        mask_to_polygon(np.zeros((3, 3), bool))


def test_mask_to_polygon_c_shape():
    m = np.zeros((40, 40), bool)
    m[5:35, 5:12] = True
    m[5:12, 5:30] = True
    m[28:35, 5:30] = True
    poly = mask_to_polygon(m)
    assert poly.shape.is_valid and poly.shape.exterior.is_simple
    # oracle: the exact crack outline of the bitmap, as a union of pixel squares
    r, c = np.nonzero(m)
    exact = shapely.union_all([shapely.box(x, 40 - y - 1, x + 1, 40 - y) for y, x in zip(r, c)])
    assert shapely.hausdorff_distance(poly.shape, exact) <= 1.0 + 1e-9
    assert polygon_iou(poly.shape, exact) > 0.95


def _const_model(sign):
    return SvmModel(support_vectors=np.zeros((0, 3)), dual_coef=np.zeros(0), bias=float(sign),
                    gamma=1.0, C=1.0, mean=np.zeros(3), scale=np.ones(3))


def test_filter_modes():
    fmap, _ = rasterize_labels(120, 130, _two_rects())
    res = detect(fmap)
    assert len(filter_instances(res.instances, _const_model(+1))) == 2
    assert len(filter_instances(res.instances, _const_model(-1))) == 0
    assert len(filter_instances(res.instances, None)) == 2
    bad = SvmModel(np.zeros((0, 4)), np.zeros(0), 1.0, 1.0, 1.0, np.zeros(4), np.ones(4))
    with pytest.raises(ModelFeatureMismatch):
        filter_instances(res.instances, bad)


def test_detect_background_and_two_rectangles():
    assert detect(GeoFeatureMap.background(30, 40)).instances == []
    polys = _two_rects()
    fmap, _ = rasterize_labels(120, 130, polys)
    res = detect(fmap)
    assert len(res.kept) == 2
    for g in polys:
        assert max(polygon_iou(d.polygon, g) for d in res.kept) >= 0.9


def test_min_area_discards_small_masks():
    fmap = one_pixel_map()
    fmap.data[1:3, 2, 2] = 0.0
    assert detect(fmap, DetectConfig(min_support=1)).instances == []
    assert len(detect(fmap, DetectConfig(min_support=1, min_area=1)).instances) == 1


def test_cluster_count_equals_instances_on_corpus():
    from ctrtext.synth import CorpusConfig, generate_corpus

    for img in generate_corpus(CorpusConfig(n_instances=40, seed=3)):
        fmap, _ = rasterize_labels(img.height, img.width, img.polygons)
        assert cluster(binarize(fmap)).n_clusters == len(img.polygons)


def test_filter_removes_spurious_keeps_true():
    from ctrtext.geom import polygon_iou as iou
    from ctrtext.pipeline import filter_dataset, run_corpus, train_filter
    from ctrtext.synth import CorpusConfig, NoiseConfig, generate_corpus

    noise = NoiseConfig(sigma_r=1.0, sigma_alpha=0.05, flip_prob=0.01, spurious_blob_rate=3, seed=5)
    X, y = filter_dataset(CorpusConfig(n_instances=80, seed=21), noise, threads=1)
    model, _ = train_filter(X, y)
    images = generate_corpus(CorpusConfig(n_instances=80, seed=22))
    results = run_corpus(images, NoiseConfig(**{**noise.to_dict(), "seed": 6}), DetectConfig(), model, threads=1)
    kept = {True: [0, 0], False: [0, 0]}
    for res, img in zip(results, images):
        for poly, val in zip(res.all_polygons, res.decision_values):
            is_true = max(iou(poly, g) for g in img.polygons) >= 0.5
            kept[is_true][0] += val >= 0
            kept[is_true][1] += 1
    assert kept[False][1] > 0
    assert 1 - kept[False][0] / kept[False][1] >= 0.8
    assert kept[True][0] / kept[True][1] >= 0.95
