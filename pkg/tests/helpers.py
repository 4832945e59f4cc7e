"""Shared constructors for tests."""

import numpy as np

from ctrtext.geom import validate_polygon


def rect(x0, y0, x1, y1, per_side=1):
    """Axis-aligned rectangle in stored order (TL, TR, BR, BL in y-up).

    ``per_side`` > 1 subdivides every side into that many equal segments.
    """
    corners = np.array([[x0, y1], [x1, y1], [x1, y0], [x0, y0]], dtype=float)
    pts, idx = [], []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        idx.append(len(pts))
        for t in np.arange(per_side) / per_side:
            pts.append(a + t * (b - a))
    return validate_polygon(pts, idx)


def grid_fiber_lengths(hmap, n=512):
    """Mean horizontal / vertical fibre lengths of the inverse map by grid sampling.

    Independent of the package's locator: the inverse is interpolated with
    matplotlib's triangle interpolator on the image mesh, and every fibre is
    measured as the length of its sampled polyline.
    """
    import matplotlib.tri as mtri

    img = hmap.image / np.array([hmap.w, hmap.h])
    tri = mtri.Triangulation(img[:, 0], img[:, 1], hmap.mesh.triangles)
    fx = mtri.LinearTriInterpolator(tri, hmap.mesh.vertices[:, 0])
    fy = mtri.LinearTriInterpolator(tri, hmap.mesh.vertices[:, 1])
    eps = 1e-9
    centres = (np.arange(n) + 0.5) / n
    along = np.clip(np.linspace(0.0, 1.0, n + 1), eps, 1 - eps)

    def mean_length(xs, ys):
        X = np.ma.filled(fx(xs, ys), np.nan)
        Y = np.ma.filled(fy(xs, ys), np.nan)
        if np.isnan(X).any() or np.isnan(Y).any():
            raise AssertionError("grid sample fell outside the image mesh")
        return float(np.hypot(np.diff(X, axis=1), np.diff(Y, axis=1)).sum(axis=1).mean())

    # rows: fixed y, varying x
    XX, YY = np.meshgrid(along, centres)
    w = mean_length(XX, YY)
    YY2, XX2 = np.meshgrid(along, centres)
    h = mean_length(XX2, YY2)
    return w, h
