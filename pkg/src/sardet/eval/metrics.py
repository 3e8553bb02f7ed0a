"""Detection matching, precision/recall and COCO-style average precision."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..boxes import BBox, iou_matrix

IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, float("inf")),
}

Detection = tuple[BBox, float]


@dataclass
class MatchResult:
    scores: list[float]  # detections in descending-score order
    tp: list[bool]
    matched_gt: list[int]  # -1 for false positives
    gt_matched: list[bool]

    @property
    def n_tp(self) -> int:
        return sum(self.tp)

    @property
    def n_fp(self) -> int:
        return len(self.tp) - self.n_tp

    @property
    def n_fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def _order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))


def match(dets: Sequence[Detection], gts: Sequence[BBox], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy score-ordered matching; each detection takes the best free ground truth."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    order = _order(dets)
    ious = (
        iou_matrix([dets[i][0].as_array() for i in order], [g.as_array() for g in gts])
        if order and gts
        else np.zeros((len(order), len(gts)))
    )
    gt_matched = [False] * len(gts)
    tp, matched = [], []
    for r in range(len(order)):
        best, best_iou = -1, iou_threshold
        for g in range(len(gts)):
            if not gt_matched[g] and ious[r, g] >= best_iou and (best < 0 or ious[r, g] > best_iou):
                best, best_iou = g, ious[r, g]
        if best >= 0:
            gt_matched[best] = True
        tp.append(best >= 0)
        matched.append(best)
    return MatchResult([dets[i][1] for i in order], tp, matched, gt_matched)


def precision_recall(m: MatchResult) -> tuple[float, float]:
    """P = TP/(TP+FP) (1.0 with no detections); R = TP/(TP+FN) (-1 with no ground truth)."""
    tp, fp, fn = m.n_tp, m.n_fp, m.n_fn
    p = tp / (tp + fp) if tp + fp else 1.0
    r = tp / (tp + fn) if tp + fn else -1.0
    return p, r


def interpolated_precision(recall: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """Envelope precision sampled at the 101 COCO recall points."""
    if len(recall) == 0:
        return np.zeros_like(RECALL_POINTS)
    env = np.maximum.accumulate(np.asarray(precision, dtype=np.float64)[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    out = np.zeros_like(RECALL_POINTS)
    ok = idx < len(recall)
    out[ok] = env[idx[ok]]
    return out


def _image_eval(dets, gt_boxes, gt_areas, thr, area_rng, max_dets):
    """Per-image COCO matching with out-of-range ground truths ignored.

    Returns (scores, tp flags, det-ignored flags, n non-ignored gts).
    """
    lo, hi = area_rng
    gt_ignore = np.array([not (lo <= a < hi) for a in gt_areas], dtype=bool)
    gorder = np.argsort(gt_ignore, kind="stable")
    order = _order(dets)[:max_dets]
    n = len(order)
    ious = (
        iou_matrix([dets[i][0].as_array() for i in order], [gt_boxes[g].as_array() for g in gorder])
        if n and len(gorder)
        else np.zeros((n, len(gorder)))
    )
    ign_sorted = gt_ignore[gorder]
    taken = np.zeros(len(gorder), dtype=bool)
    tp = np.zeros(n, dtype=bool)
    dt_ignore = np.zeros(n, dtype=bool)
    for r in range(n):
        best, best_iou = -1, min(thr, 1 - 1e-10)
        for g in range(len(gorder)):
            if taken[g]:
                continue
            if best > -1 and not ign_sorted[best] and ign_sorted[g]:
                break
            if ious[r, g] < best_iou or (best > -1 and ious[r, g] == best_iou):
                continue
            best, best_iou = g, ious[r, g]
        if best > -1:
            taken[best] = True
            tp[r] = True
            dt_ignore[r] = ign_sorted[best]
        else:
            a = dets[order[r]][0].area
            dt_ignore[r] = not (lo <= a < hi)
    scores = np.array([dets[i][1] for i in order])
    return scores, tp, dt_ignore, int((~gt_ignore).sum())


def _accumulate(per_image):
    scores = np.concatenate([p[0] for p in per_image]) if per_image else np.zeros(0)
    tps = np.concatenate([p[1] for p in per_image]) if per_image else np.zeros(0, bool)
    ign = np.concatenate([p[2] for p in per_image]) if per_image else np.zeros(0, bool)
    npig = sum(p[3] for p in per_image)
    if npig == 0:
        return -1.0, np.zeros(0), np.zeros(0)
    order = np.argsort(-scores, kind="mergesort")
    tps, ign = tps[order], ign[order]
    keep = ~ign
    tp_c = np.cumsum(tps[keep]).astype(np.float64)
    fp_c = np.cumsum(~tps[keep]).astype(np.float64)
    recall = tp_c / npig
    precision = tp_c / np.maximum(tp_c + fp_c, np.finfo(np.float64).eps)
    q = interpolated_precision(recall, precision)
    return float(q.mean()), recall, precision


def _as_mappings(dets, gts):
    if not isinstance(gts, Mapping):
        gts = dict(enumerate(gts))
        dets = dict(enumerate(dets))
    return dets, gts


def average_precision(
    dets: Mapping | Sequence,
    gts: Mapping | Sequence,
    iou_threshold: float = 0.5,
    gt_areas: Mapping | None = None,
    area_rng=AREA_RANGES["all"],
    max_dets: int = 100,
) -> float:
    """101-point interpolated AP over a dataset; -1 when there is no ground truth.

    ``dets`` and ``gts`` map image id -> detections / boxes (lists are keyed by
    position).
    """
    dets, gts = _as_mappings(dets, gts)
    per_image = []
    for img_id, boxes in gts.items():
        areas = gt_areas[img_id] if gt_areas is not None else [b.area for b in boxes]
        per_image.append(_image_eval(dets.get(img_id, []), boxes, areas, iou_threshold, area_rng, max_dets))
    return _accumulate(per_image)[0]


@dataclass
class EvalReport:
    precision: float
    recall: float
    ap50: float
    ap75: float
    ap_50_95: float
    ap_small: float
    ap_medium: float
    ap_large: float
    score_threshold: float = 0.25
    pr_curve: list[tuple[float, float]] = field(default_factory=list)
    ap_per_threshold: list[float] = field(default_factory=list)
    config_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["pr_curve"] = [tuple(p) for p in d["pr_curve"]]
        return cls(**d)


def _clip(b: BBox, size) -> BBox | None:
    W, H = size
    x1, y1, x2, y2 = b.corners()
    if x1 >= 0 and y1 >= 0 and x2 <= W and y2 <= H:
        return b
    x1, y1, x2, y2 = max(x1, 0.0), max(y1, 0.0), min(x2, W), min(y2, H)
    return BBox.from_corners(x1, y1, x2, y2) if x2 > x1 and y2 > y1 else None


def coco_suite(
    dets: Mapping,
    gts: Mapping,
    image_sizes: Mapping | None = None,
    gt_areas: Mapping | None = None,
    score_threshold: float = 0.25,
    max_dets: int = 100,
    size_partitions: bool = True,
) -> EvalReport:
    """AP@.5, AP@.75, AP@[.5:.95], AP small/medium/large, plus P/R at ``score_threshold``.

    All boxes are in original-image pixels; ``image_sizes`` maps id -> (W, H).
    """
    dets, gts = _as_mappings(dets, gts)
    if size_partitions:
        if image_sizes is None:
            raise ValueError("image sizes are required for size-partitioned AP")
        missing = [k for k in gts if k not in image_sizes]
        if missing:
            raise ValueError(f"missing image sizes for {missing[:5]}")
    if image_sizes is not None:
        dets = {k: [(c, s) for c, s in ((_clip(b, image_sizes[k]), s) for b, s in v) if c is not None] for k, v in dets.items()}
    areas = gt_areas or {k: [b.area for b in v] for k, v in gts.items()}

    def ap_at(thr, rng):
        per_image = [_image_eval(dets.get(k, []), gts[k], areas[k], thr, rng, max_dets) for k in gts]
        return _accumulate(per_image)

    aps = []
    curve: list[tuple[float, float]] = []
    for thr in IOU_THRESHOLDS:
        ap, rec, prec = ap_at(float(thr), AREA_RANGES["all"])
        aps.append(ap)
        if thr == 0.5 and ap >= 0:
            curve = list(zip(RECALL_POINTS.tolist(), interpolated_precision(rec, prec).tolist()))
    valid = [a for a in aps if a >= 0]
    ap_5095 = float(np.mean(valid)) if valid else -1.0
    sized = {"small": -1.0, "medium": -1.0, "large": -1.0}
    if size_partitions:
        for name in sized:
            per_t = [ap_at(float(t), AREA_RANGES[name])[0] for t in IOU_THRESHOLDS]
            sized[name] = float(np.mean(per_t)) if per_t[0] >= 0 else -1.0

    tp = fp = fn = 0
    for k in gts:
        kept = [d for d in dets.get(k, []) if d[1] >= score_threshold]
        m = match(kept, gts[k], 0.5)
        tp, fp, fn = tp + m.n_tp, fp + m.n_fp, fn + m.n_fn
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else -1.0
    return EvalReport(
        precision,
        recall,
        aps[0],
        aps[5],
        ap_5095,
        sized["small"],
        sized["medium"],
        sized["large"],
        score_threshold,
        curve,
        aps,
    )


def pr_curve_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recall", "precision"])
    for r, p in report.pr_curve:
        w.writerow([repr(float(r)), repr(float(p))])
    return buf.getvalue()


def export_pr_curve(report: EvalReport, path) -> Path:
    if not report.pr_curve:
        raise ValueError("report has no PR curve samples")
    path = Path(path)
    path.write_text(pr_curve_csv(report))
    return path
