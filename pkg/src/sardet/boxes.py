"""Box geometry: Gaussian box model, Wasserstein similarity, IoU family, NMS.

All boxes are center format ``(cx, cy, w, h)`` in pixels.  Scalar functions
work on :class:`BBox`; the ``*_loss_t`` functions take ``(N, 4)`` tensors and
are differentiable for training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor.core import Tensor, as_tensor, make_result, where
from .tensor.core import clamp as tclamp


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"BBox fields must be finite, got {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs positive width and height, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, s: float) -> "BBox":
        return BBox(self.cx * s, self.cy * s, self.w * s, self.h * s)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


@dataclass(frozen=True)
class Gaussian2D:
    mu: tuple[float, float]
    sigma: tuple[float, float]  # diagonal of the covariance

    def __post_init__(self):
        if min(self.sigma) <= 0:
            raise ValueError("Gaussian2D covariance diagonal must be positive")

    @property
    def covariance(self) -> np.ndarray:
        return np.diag(self.sigma)


@dataclass(frozen=True)
class LossKind:
    """Box-regression loss selector: ``nwd`` (with constant ``c``), ``iou``, ``giou`` or ``diou``."""

    name: str
    c: float = 12.8

    def __post_init__(self):
        if self.name not in ("nwd", "iou", "giou", "diou"):
            raise ValueError(f"unknown loss kind {self.name!r}")
        if self.name == "nwd" and not self.c > 0:
            raise ValueError("NWD constant c must be positive")

    def __str__(self) -> str:
        return f"nwd(c={self.c:g})" if self.name == "nwd" else self.name


def box_to_gaussian(b: BBox) -> Gaussian2D:
    return Gaussian2D((b.cx, b.cy), (b.w * b.w / 4.0, b.h * b.h / 4.0))


def wasserstein_sq(a: BBox, b: BBox) -> float:
    """Squared 2-Wasserstein distance between the two boxes' Gaussians."""
    dx, dy = a.cx - b.cx, a.cy - b.cy
    dw, dh = (a.w - b.w) / 2.0, (a.h - b.h) / 2.0
    return dx * dx + dy * dy + dw * dw + dh * dh


def nwd(a: BBox, b: BBox, c: float) -> float:
    if not c > 0:
        raise ValueError("NWD constant c must be positive")
    return math.exp(-math.sqrt(wasserstein_sq(a, b)) / c)


def nwd_loss(pred: BBox, target: BBox, c: float) -> float:
    return 1.0 - nwd(pred, target, c)


def _overlap(a: BBox, b: BBox):
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area + b.area - inter
    ew = max(ax2, bx2) - min(ax1, bx1)
    eh = max(ay2, by2) - min(ay1, by1)
    return inter, union, ew, eh


def iou(a: BBox, b: BBox) -> float:
    inter, union, _, _ = _overlap(a, b)
    return min(inter / union, 1.0)  # rounding can push identical boxes past 1


def giou(a: BBox, b: BBox) -> float:
    inter, union, ew, eh = _overlap(a, b)
    enclose = ew * eh
    return min(inter / union, 1.0) - max(enclose - union, 0.0) / enclose


def diou(a: BBox, b: BBox) -> float:
    inter, union, ew, eh = _overlap(a, b)
    d2 = (a.cx - b.cx) ** 2 + (a.cy - b.cy) ** 2
    return min(inter / union, 1.0) - d2 / (ew * ew + eh * eh)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) center-format arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    a1, a2 = a[:, None, :2] - a[:, None, 2:] / 2, a[:, None, :2] + a[:, None, 2:] / 2
    b1, b2 = b[None, :, :2] - b[None, :, 2:] / 2, b[None, :, :2] + b[None, :, 2:] / 2
    wh = np.clip(np.minimum(a2, b2) - np.maximum(a1, b1), 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def nms(
    dets: Sequence[tuple[BBox, float]], iou_threshold: float = 0.45, score_threshold: float = 0.25
) -> list[tuple[BBox, float]]:
    """Greedy NMS; ties in score keep insertion order."""
    if not (0.0 <= iou_threshold <= 1.0 and 0.0 <= score_threshold <= 1.0):
        raise ValueError("NMS thresholds must lie in [0, 1]")
    cand = [i for i, (_, s) in enumerate(dets) if s >= score_threshold]
    if not cand:
        return []
    cand.sort(key=lambda i: (-dets[i][1], i))
    boxes = np.array([dets[i][0].as_array() for i in cand])
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(cand), dtype=bool)
    keep = []
    for r in range(len(cand)):
        if suppressed[r]:
            continue
        keep.append(cand[r])
        suppressed |= ious[r] > iou_threshold
    return [dets[i] for i in keep]


# ---------------------------------------------------------------------------
# differentiable batch losses on (N, 4) tensors
# ---------------------------------------------------------------------------

def nwd_loss_t(pred: Tensor, target, c: float) -> Tensor:
    """Per-row ``1 - NWD``; the gradient at an exact match is taken as zero."""
    if not c > 0:
        raise ValueError("NWD constant c must be positive")
    p = pred.data
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    diff = p - t
    diff[:, 2:] *= 0.5
    dist = np.sqrt((diff * diff).sum(axis=1))
    sim = np.exp(-dist / c)

    def _bw(g):
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where(dist > 0, sim / (c * safe), 0.0)
        grad = diff * coef[:, None]
        grad[:, 2:] *= 0.5
        return (g[:, None] * grad,)

    return make_result(1.0 - sim, (pred,), _bw, "nwd_loss")


def _minimum(a: Tensor, b: Tensor) -> Tensor:
    return where(a.data <= b.data, a, b)


def _maximum(a: Tensor, b: Tensor) -> Tensor:
    return where(a.data >= b.data, a, b)


def _iou_terms(pred: Tensor, target: Tensor):
    pcx, pcy, pw, ph = (pred[:, i] for i in range(4))
    tcx, tcy, tw, th = (target[:, i] for i in range(4))
    px1, px2, py1, py2 = pcx - pw * 0.5, pcx + pw * 0.5, pcy - ph * 0.5, pcy + ph * 0.5
    tx1, tx2, ty1, ty2 = tcx - tw * 0.5, tcx + tw * 0.5, tcy - th * 0.5, tcy + th * 0.5
    iw = tclamp(_minimum(px2, tx2) - _maximum(px1, tx1), lo=0.0)
    ih = tclamp(_minimum(py2, ty2) - _maximum(py1, ty1), lo=0.0)
    inter = iw * ih
    union = pw * ph + tw * th - inter
    ew = _maximum(px2, tx2) - _minimum(px1, tx1)
    eh = _maximum(py2, ty2) - _minimum(py1, ty1)
    return inter / union, union, ew, eh, (pcx - tcx), (pcy - tcy)


def iou_loss_t(pred: Tensor, target) -> Tensor:
    return 1.0 - _iou_terms(pred, as_tensor(target))[0]


def giou_loss_t(pred: Tensor, target) -> Tensor:
    i, union, ew, eh, _, _ = _iou_terms(pred, as_tensor(target))
    enclose = ew * eh
    return 1.0 - (i - (enclose - union) / enclose)


def diou_loss_t(pred: Tensor, target) -> Tensor:
    i, _, ew, eh, dx, dy = _iou_terms(pred, as_tensor(target))
    return 1.0 - (i - (dx * dx + dy * dy) / (ew * ew + eh * eh))


def box_loss_t(pred: Tensor, target, kind: LossKind) -> Tensor:
    if kind.name == "nwd":
        return nwd_loss_t(pred, target, kind.c)
    return {"iou": iou_loss_t, "giou": giou_loss_t, "diou": diou_loss_t}[kind.name](pred, target)
