"""RBF soft-margin SVM trained by SMO, with grid search and stratified CV.

The trainer follows the usual dual formulation

    min 1/2 a^T Q a - e^T a,  0 <= a_i <= C,  y^T a = 0,  Q_ij = y_i y_j K_ij

and picks working pairs with second-order information (maximal violating
``i``, then the ``j`` giving the largest decrease of the objective).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InsufficientData, ModelFeatureMismatch, SingleClassData
from .geom import polygon_iou
from .io import atomic_write

log = logging.getLogger(__name__)

C_GRID = (0.1, 1.0, 10.0, 100.0)
GAMMA_GRID = (1.0, 0.1, 0.001, 0.0001, 0.00001)
FORMAT_VERSION = 1
TAU = 1e-12


def rbf_kernel(x, y, gamma: float) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(X, Y, gamma: float) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # standardized features
    dual_coef: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int = 0
    cv_table: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def standardize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ModelFeatureMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.bias)
        K = rbf_matrix(self.standardize(X), self.support_vectors, self.gamma)
        return K @ self.dual_coef + self.bias

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kernel": "rbf",
            "gamma": self.gamma,
            "C": self.C,
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "n_iter": self.n_iter,
            "cv_table": self.cv_table,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {d.get('format_version')!r}")
        try:
            mean = np.asarray(d["mean"], dtype=float)
            sv = np.asarray(d["support_vectors"], dtype=float).reshape(-1, len(mean))
            return cls(support_vectors=sv,
                       dual_coef=np.asarray(d["dual_coef"], dtype=float),
                       bias=float(d["bias"]), gamma=float(d["gamma"]), C=float(d["C"]),
                       mean=mean, scale=np.asarray(d["scale"], dtype=float),
                       n_iter=int(d.get("n_iter", 0)), cv_table=list(d.get("cv_table", [])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed model document: {exc}") from exc


def save_model(model: SvmModel, path) -> None:
    text = json.dumps(model.to_dict(), indent=1, sort_keys=True)
    atomic_write(path, text.encode())


def load_model(path) -> SvmModel:
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return SvmModel.from_dict(d)


def _standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[~(scale > 1e-12)] = 1.0
    return mean, scale


def train_smo(samples, labels, C: float = 1.0, gamma: float = 1.0, tol: float = 1e-3,
              max_iter: int = 1_000_000) -> SvmModel:
    """Train a binary RBF SVM with SMO.

    Parameters
    ----------
    samples : (n, d) array of raw features (standardized internally)
    labels : (n,) array of -1 / +1
    C, gamma : box constraint and RBF width
    tol : stopping tolerance on the maximal KKT violation
    """
    X = np.asarray(samples, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("samples must be (n, d) with one label per row")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassData("training data contains a single class")
    mean, scale = _standardization(X)
    Z = (X - mean) / scale
    K = rbf_matrix(Z, Z, gamma)
    alpha, bias, it = _smo(K, y, C, tol, max_iter)
    sv = alpha > 0
    return SvmModel(support_vectors=Z[sv], dual_coef=(alpha * y)[sv], bias=bias,
                    gamma=float(gamma), C=float(C), mean=mean, scale=scale, n_iter=it)


def _smo(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    n = len(y)
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective
    pos = y > 0
    it = 0
    while it < max_iter:
        # I_up / I_low membership
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        gmax = s_up[i]
        s_low = np.where(low, score, np.inf)
        gmin = s_low.min()
        if gmax - gmin < tol:
            break
        # second-order choice of j among violating I_low members
        Ki = K[i]
        b = gmax - score
        a = QD[i] + QD - 2.0 * Ki
        a = np.where(a > 0, a, TAU)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        if not np.isfinite(obj[j]):
            break
        _update_pair(i, j, K, y, alpha, G, C, QD)
        it += 1
    else:
        log.warning("SMO reached max_iter=%d before convergence", max_iter)

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub = np.inf
        lb = -np.inf
        at_up = alpha >= C
        at_low = alpha <= 0
        # bounds on rho from the active constraints
        m1 = (pos & at_up) | (~pos & at_low)
        m2 = (pos & at_low) | (~pos & at_up)
        if m1.any():
            lb = max(lb, float(yG[m1].max()))
        if m2.any():
            ub = min(ub, float(yG[m2].min()))
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return alpha, -rho, it


def _update_pair(i, j, K, y, alpha, G, C, QD):
    Qij = y[i] * y[j] * K[i, j]
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = QD[i] + QD[j] + 2.0 * Qij
        quad = quad if quad > 0 else TAU
        delta = (-G[i] - G[j]) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        else:
            if ai < 0:
                ai, aj = 0.0, -diff
        if diff > 0:
            if ai > C:
                ai, aj = C, C - diff
        else:
            if aj > C:
                aj, ai = C, C + diff
    else:
        quad = QD[i] + QD[j] - 2.0 * Qij
        quad = quad if quad > 0 else TAU
        delta = (G[i] - G[j]) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > C:
            if ai > C:
                ai, aj = C, total - C
        else:
            if aj < 0:
                aj, ai = 0.0, total
        if total > C:
            if aj > C:
                aj, ai = C, total - C
        else:
            if ai < 0:
                ai, aj = 0.0, total
    dai = ai - alpha[i]
    daj = aj - alpha[j]
    alpha[i], alpha[j] = ai, aj
    G += y * (y[i] * K[i] * dai + y[j] * K[j] * daj)


def predict(model: SvmModel, features):
    """Labels in {-1, +1} (decision value 0 counts as +1) and decision values."""
    values = model.decision_function(features)
    return np.where(values >= 0, 1, -1), values


def stratified_folds(labels, k: int, seed: int) -> list:
    """Index arrays of ``k`` folds with class proportions preserved."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (-1, 1):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        for r, t in enumerate(idx):
            folds[(r + offset) % k].append(int(t))
        offset += len(idx)
    return [np.sort(np.asarray(f, dtype=np.int64)) for f in folds]


def cross_val_accuracy(X, y, C, gamma, folds, tol=1e-3) -> list:
    accs = []
    all_idx = np.arange(len(y))
    for test in folds:
        train = np.setdiff1d(all_idx, test)
        model = train_smo(X[train], y[train], C, gamma, tol)
        pred, _ = predict(model, X[test])
        accs.append(float(np.mean(pred == y[test])))
    return accs


def select_best(table: list) -> tuple:
    """Highest mean accuracy; ties go to the smaller C, then the smaller gamma."""
    best = min(table, key=lambda r: (-r["mean_accuracy"], r["C"], r["gamma"]))
    return best["C"], best["gamma"]


@dataclass
class GridSearchResult:
    C: float
    gamma: float
    table: list


def grid_search_cv(samples, labels, C_grid=C_GRID, gamma_grid=GAMMA_GRID,
                   k: int = 5, seed: int = 0, tol: float = 1e-3) -> GridSearchResult:
    """Exhaustive (C, gamma) search scored by stratified k-fold accuracy."""
    X = np.asarray(samples, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    npos, nneg = int((y > 0).sum()), int((y < 0).sum())
    if npos == 0 or nneg == 0:
        raise SingleClassData("training data contains a single class")
    if min(npos, nneg) < k:
        raise InsufficientData(f"need at least {k} samples per class, got {npos} positive / {nneg} negative")
    folds = stratified_folds(y, k, seed)
    table = []
    for C in C_grid:
        for gamma in gamma_grid:
            accs = cross_val_accuracy(X, y, C, gamma, folds, tol)
            table.append({"C": float(C), "gamma": float(gamma),
                          "fold_accuracy": accs, "mean_accuracy": float(np.mean(accs))})
    C, gamma = select_best(table)
    return GridSearchResult(C=C, gamma=gamma, table=table)


def build_filter_dataset(detections_per_image, gts_per_image, iou_thresh: float = 0.5):
    """Label detections +1 when their best ground-truth IoU reaches ``iou_thresh``.

    ``detections_per_image`` holds, per image, a list of
    ``(features, polygon)`` pairs; ``gts_per_image`` lists polygons.
    """
    X, y = [], []
    for dets, gts in zip(detections_per_image, gts_per_image):
        for feats, poly in dets:
            best = max((polygon_iou(poly, g) for g in gts), default=0.0)
            X.append(np.asarray(feats, dtype=float))
            y.append(1 if best >= iou_thresh else -1)
    return np.asarray(X, dtype=float).reshape(-1, 3), np.asarray(y, dtype=np.int64)
