"""Independent reference implementations used as test oracles.

These are deliberately written from scratch (plain loops, corner-format
arithmetic) rather than by calling into the library.
"""

from __future__ import annotations

import numpy as np

# the 101 recall sample points, generated the same way pycocotools does
RECALL_GRID = np.linspace(0.0, 1.0, 101)


def corners(b):
    return (b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2)


def iou_plain(a, b):
    ax1, ay1, ax2, ay2 = corners(a)
    bx1, by1, bx2, by2 = corners(b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def iou_raster(a, b, supersample=10):
    """IoU by counting sub-pixel sample centers inside each box."""
    ax1, ay1, ax2, ay2 = corners(a)
    bx1, by1, bx2, by2 = corners(b)
    x0, y0 = min(ax1, bx1), min(ay1, by1)
    x1, y1 = max(ax2, bx2), max(ay2, by2)
    step = 1.0 / supersample
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    X, Y = np.meshgrid(xs, ys)
    ina = (X >= ax1) & (X < ax2) & (Y >= ay1) & (Y < ay2)
    inb = (X >= bx1) & (X < bx2) & (Y >= by1) & (Y < by2)
    union = np.count_nonzero(ina | inb)
    return np.count_nonzero(ina & inb) / union if union else 0.0


def nms_reference(dets, iou_threshold, score_threshold):
    """O(n^2): a box survives iff no higher-ranked surviving box overlaps it too much."""
    ranked = sorted(
        [(i, d) for i, d in enumerate(dets) if d[1] >= score_threshold],
        key=lambda t: (-t[1][1], t[0]),
    )
    kept = []
    for i, (b, s) in ranked:
        if all(iou_plain(b, kb) <= iou_threshold for kb, _ in kept):
            kept.append((b, s))
    return kept


def match_reference(dets, gts, thr):
    """Returns (tp flags in score order, matched gt index per detection)."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))
    free = set(range(len(gts)))
    tps, which = [], []
    for i in order:
        cands = [(iou_plain(dets[i][0], gts[g]), -g) for g in free]
        cands = [c for c in cands if c[0] >= thr]
        if cands:
            _, ng = max(cands)
            g = -ng
            free.discard(g)
            tps.append(True)
            which.append(g)
        else:
            tps.append(False)
            which.append(-1)
    return tps, which


def _ap_101(recalls, precisions):
    total = 0.0
    for k in range(101):
        r = RECALL_GRID[k]
        best = 0.0
        for rc, pr in zip(recalls, precisions):
            if rc >= r and pr > best:
                best = pr
        total += best
    return total / 101.0


def coco_reference(dets, gts, areas, lo=0.0, hi=float("inf"), thr=0.5, max_dets=100):
    """COCO-style AP for one IoU threshold and one area range.

    dets: id -> [(BBox, score)], gts: id -> [BBox], areas: id -> [area].
    Ground truths outside [lo, hi) are ignored; a detection matched to an
    ignored ground truth, or unmatched with area outside the range, is dropped.
    """
    records = []  # (score, image order, rank, is_tp)
    n_pos = 0
    for order, img in enumerate(gts):
        g = gts[img]
        ignore = [not (lo <= a < hi) for a in areas[img]]
        n_pos += sum(1 for x in ignore if not x)
        ds = sorted(enumerate(dets.get(img, [])), key=lambda t: (-t[1][1], t[0]))[:max_dets]
        used = [False] * len(g)
        for rank, (_, (b, s)) in enumerate(ds):
            # prefer non-ignored ground truths, then highest IoU, then lowest index
            best, best_key = None, None
            for j in range(len(g)):
                if used[j]:
                    continue
                v = iou_plain(b, g[j])
                if v < min(thr, 1 - 1e-10):
                    continue
                key = (not ignore[j], v, -j)
                if best_key is None or key > best_key:
                    best, best_key = j, key
            if best is None:
                if lo <= b.w * b.h < hi:
                    records.append((s, order, rank, False))
                continue
            used[best] = True
            if not ignore[best]:
                records.append((s, order, rank, True))
    if n_pos == 0:
        return -1.0
    records.sort(key=lambda r: (-r[0], r[1], r[2]))
    tp = fp = 0
    recalls, precisions = [], []
    for _, _, _, hit in records:
        tp += hit
        fp += not hit
        recalls.append(tp / n_pos)
        precisions.append(tp / (tp + fp))
    return _ap_101(recalls, precisions)
