"""Detection evaluation: greedy IoU matching and precision / recall / F."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .geom import polygon_iou


def match_detections(preds, gts, iou_thresh: float = 0.5) -> list:
    """Greedy one-to-one matching in descending IoU order.

    Returns ``(pred_index, gt_index, iou)`` tuples. Equal IoUs are resolved
    by the lower prediction index, then the lower ground-truth index.
    """
    pairs = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            iou = polygon_iou(p, g)
            if iou >= iou_thresh:
                pairs.append((-iou, i, j))
    pairs.sort()
    used_p, used_g, matches = set(), set(), []
    for neg_iou, i, j in pairs:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        matches.append((i, j, -neg_iou))
    return matches


def prf(n_matches: int, n_preds: int, n_gts: int) -> tuple:
    """Precision, recall and F-measure from match counts.

    With no predictions precision is 1 only when there is also no ground
    truth; with no ground truth recall is 1.
    """
    if n_preds > 0:
        p = n_matches / n_preds
    else:
        p = 1.0 if n_gts == 0 else 0.0
    r = n_matches / n_gts if n_gts > 0 else 1.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class EvalReport:
    iou_thresh: float
    per_image: list = field(default_factory=list)
    n_matches: int = 0
    n_preds: int = 0
    n_gts: int = 0

    def add_image(self, preds, gts, name=None) -> list:
        matches = match_detections(preds, gts, self.iou_thresh)
        self.per_image.append({
            "image": name if name is not None else len(self.per_image),
            "n_preds": len(preds),
            "n_gts": len(gts),
            "matches": [[i, j, round(iou, 6)] for i, j, iou in matches],
        })
        self.n_matches += len(matches)
        self.n_preds += len(preds)
        self.n_gts += len(gts)
        return matches

    @property
    def precision(self) -> float:
        return prf(self.n_matches, self.n_preds, self.n_gts)[0]

    @property
    def recall(self) -> float:
        return prf(self.n_matches, self.n_preds, self.n_gts)[1]

    @property
    def f_measure(self) -> float:
        return prf(self.n_matches, self.n_preds, self.n_gts)[2]

    def to_dict(self) -> dict:
        return {
            "iou_thresh": self.iou_thresh,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
            "n_matches": self.n_matches,
            "n_preds": self.n_preds,
            "n_gts": self.n_gts,
            "per_image": self.per_image,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def summary(self) -> str:
        return (f"IoU>={self.iou_thresh:g}  P={self.precision:.4f}  R={self.recall:.4f}  "
                f"F={self.f_measure:.4f}  (matches {self.n_matches}, preds {self.n_preds}, "
                f"gts {self.n_gts})")


def evaluate(preds_per_image, gts_per_image, iou_thresh: float = 0.5) -> EvalReport:
    report = EvalReport(iou_thresh=iou_thresh)
    for k, (preds, gts) in enumerate(zip(preds_per_image, gts_per_image)):
        report.add_image(preds, gts, k)
    return report
