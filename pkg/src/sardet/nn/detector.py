"""Mini anchor-free detector: optional CID stem, CBL/C2f backbone with SPAF
tail, top-down fusion neck, and a per-level CBL -> PPA -> 1x1 head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..boxes import BBox, LossKind, box_loss_t
from ..rng import Rng
from ..tensor import functional as F
from ..tensor.core import Tensor, clamp, concat
from .blocks import CID, PPA, SPPF, C2fLite, CidConfig, PpaConfig
from .module import CBL, Conv2d, Module

STRIDES = (8, 16, 32)
TW_CLAMP = 6.0
PRIOR_OBJ = 0.01


@dataclass
class DetectorConfig:
    in_channels: int = 3
    cid: CidConfig = field(default_factory=CidConfig)
    stem_width: int = 16
    backbone_widths: tuple = (24, 32, 48, 64)  # strides 4, 8, 16, 32
    head_width: int = 32
    n_bottlenecks: int = 1
    enable_cid: bool = True
    enable_ppa: bool = True
    head_attention: str = "ppa"
    ppa_token_ratio: float = 1.0
    ppa_channel_ratio: float = 1.0
    ppa_dropout: float = 0.1
    ppa_ca_reduction: int = 8
    ppa_sa_kernel: int = 7
    loss: LossKind = field(default_factory=lambda: LossKind("nwd", 12.8))
    obj_weight: float = 1.0

    def __post_init__(self):
        if len(self.backbone_widths) != 4:
            raise ValueError("backbone_widths needs four entries (strides 4, 8, 16, 32)")
        if self.head_attention != "ppa":
            raise ValueError("only the 'ppa' head attention variant is available")

    def ppa_config(self, channels: int) -> PpaConfig:
        return PpaConfig(
            channels=channels,
            select_token_ratio=self.ppa_token_ratio,
            select_channel_ratio=self.ppa_channel_ratio,
            dropout_p=self.ppa_dropout,
            ca_reduction=self.ppa_ca_reduction,
            sa_kernel=self.ppa_sa_kernel,
        )


class Detector(Module):
    def __init__(self, rng: Rng, cfg: DetectorConfig):
        super().__init__()
        self.cfg = cfg
        E = cfg.cid.embed_channels
        if cfg.enable_cid:
            self.stem = CID(rng.split("cid"), replace(cfg.cid, in_channels=cfg.in_channels))
        else:
            self.stem = CBL(rng.split("stem"), cfg.in_channels, E, 3)
        w4, w8, w16, w32 = cfg.backbone_widths
        s0 = cfg.stem_width
        n = cfg.n_bottlenecks
        self.down = [
            CBL(rng.split("down", 0), E, s0, 3, 2),
            CBL(rng.split("down", 1), s0, w4, 3, 2),
            CBL(rng.split("down", 2), w4, w8, 3, 2),
            CBL(rng.split("down", 3), w8, w16, 3, 2),
            CBL(rng.split("down", 4), w16, w32, 3, 2),
        ]
        self.c2f = [
            C2fLite(rng.split("c2f", 8), w8, w8, n),
            C2fLite(rng.split("c2f", 16), w16, w16, n),
            C2fLite(rng.split("c2f", 32), w32, w32, n),
        ]
        self.sppf = SPPF(rng.split("sppf"), w32)
        self.spaf_ppa = PPA(rng.split("spaf_ppa"), cfg.ppa_config(w32)) if cfg.enable_ppa else None
        self.neck = [
            C2fLite(rng.split("neck", 16), w32 + w16, w16, n),
            C2fLite(rng.split("neck", 8), w16 + w8, w8, n),
        ]
        hw = cfg.head_width
        self.head_cbl = [CBL(rng.split("head_cbl", s), c, hw, 3) for s, c in zip(STRIDES, (w8, w16, w32))]
        self.head_ppa = (
            [PPA(rng.split("head_ppa", s), cfg.ppa_config(hw)) for s in STRIDES] if cfg.enable_ppa else []
        )
        self.head_out = [Conv2d(rng.split("head_out", s), hw, 5, 1) for s in STRIDES]
        prior = math.log(PRIOR_OBJ / (1.0 - PRIOR_OBJ))
        for conv in self.head_out:
            conv.weight.data *= 0.1
            conv.bias.data[4] = prior

    def set_dropout_rng(self, rng: Rng | None) -> None:
        for i, m in enumerate(mm for mm in self.modules() if isinstance(mm, PPA)):
            m.dropout_rng = None if rng is None else rng.split(i).generator()

    def features(self, image: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        """Backbone outputs (C1..C3) and neck outputs (P1..P3)."""
        _, _, H, W = image.shape
        if H % 32 or W % 32:
            raise ValueError(f"input height and width must be divisible by 32, got {H}x{W}")
        x = self.stem(image)
        x = self.down[1](self.down[0](x))
        c1 = self.c2f[0](self.down[2](x))
        c2 = self.c2f[1](self.down[3](c1))
        c3 = self.sppf(self.c2f[2](self.down[4](c2)))
        if self.spaf_ppa is not None:
            c3 = self.spaf_ppa(c3)
        p2 = self.neck[0](concat([F.upsample_nearest2x(c3), c2], axis=1))
        p1 = self.neck[1](concat([F.upsample_nearest2x(p2), c1], axis=1))
        return [c1, c2, c3], [p1, p2, c3]

    def forward(self, image: Tensor) -> list[Tensor]:
        _, necks = self.features(image)
        outs = []
        for i, p in enumerate(necks):
            h = self.head_cbl[i](p)
            if self.head_ppa:
                h = self.head_ppa[i](h)
            outs.append(self.head_out[i](h))
        return outs


# ---------------------------------------------------------------------------
# box coding
# ---------------------------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def encode_box(b: BBox, stride: int) -> tuple[int, int, np.ndarray]:
    """Cell (row, col) owning the box center and the raw (tx, ty, tw, th) that decode back to it."""
    col, row = int(b.cx // stride), int(b.cy // stride)
    fx, fy = b.cx / stride - col, b.cy / stride - row
    if not (0.0 < fx < 1.0 and 0.0 < fy < 1.0):
        raise ValueError("box center lies on a cell boundary; not representable")
    t = np.array([math.log(fx / (1 - fx)), math.log(fy / (1 - fy)), math.log(b.w / stride), math.log(b.h / stride)])
    return row, col, t


def decode_predictions(
    outputs: Sequence, img_size, score_threshold: float = 0.25, strides=STRIDES
) -> list[list[tuple[BBox, float]]]:
    """Turn raw head maps into per-image lists of (box, score) above the threshold.

    Boxes are clipped to the image; scores are sigmoid(objectness).
    """
    W, H = (img_size, img_size) if np.isscalar(img_size) else img_size
    B = outputs[0].shape[0]
    results: list[list[tuple[BBox, float]]] = [[] for _ in range(B)]
    for r, stride in zip(outputs, strides):
        r = r.data if isinstance(r, Tensor) else np.asarray(r)
        _, _, h, w = r.shape
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        score = _sigmoid(r[:, 4])
        cx = (cols + _sigmoid(r[:, 0])) * stride
        cy = (rows + _sigmoid(r[:, 1])) * stride
        bw = stride * np.exp(np.clip(r[:, 2], -TW_CLAMP, TW_CLAMP))
        bh = stride * np.exp(np.clip(r[:, 3], -TW_CLAMP, TW_CLAMP))
        x1, x2 = np.clip(cx - bw / 2, 0, W), np.clip(cx + bw / 2, 0, W)
        y1, y2 = np.clip(cy - bh / 2, 0, H), np.clip(cy + bh / 2, 0, H)
        for b, y, x in zip(*np.nonzero(score > score_threshold)):
            if x2[b, y, x] > x1[b, y, x] and y2[b, y, x] > y1[b, y, x]:
                box = BBox.from_corners(x1[b, y, x], y1[b, y, x], x2[b, y, x], y2[b, y, x])
                results[b].append((box, float(score[b, y, x])))
    return results


# ---------------------------------------------------------------------------
# target assignment and loss
# ---------------------------------------------------------------------------

def assign_level(b: BBox, strides=STRIDES) -> int:
    size = math.sqrt(b.w * b.h)
    return int(np.argmin([abs(s - size) for s in strides]))


def assign_targets(targets: Sequence[Sequence[BBox]], shapes, strides=STRIDES):
    """Map each target to (level, batch, row, col); later targets win a shared cell."""
    cells: dict[tuple[int, int, int, int], BBox] = {}
    for bi, boxes in enumerate(targets):
        for b in boxes:
            lvl = assign_level(b, strides)
            h, w = shapes[lvl]
            s = strides[lvl]
            row = min(max(int(b.cy // s), 0), h - 1)
            col = min(max(int(b.cx // s), 0), w - 1)
            cells[(lvl, bi, row, col)] = b
    return cells


def detection_loss(
    outputs: Sequence[Tensor],
    targets: Sequence[Sequence[BBox]],
    loss_kind: LossKind,
    img_size: int | None = None,
    obj_weight: float = 1.0,
    strides=STRIDES,
) -> tuple[Tensor, Tensor, Tensor]:
    """Return (total, box_term, obj_term) for one batch.

    ``targets[b]`` lists the boxes of image ``b`` in input-pixel coordinates.
    """
    shapes = [o.shape[2:] for o in outputs]
    if img_size is not None:
        for boxes in targets:
            for b in boxes:
                x1, y1, x2, y2 = b.corners()
                if x1 < -1e-6 or y1 < -1e-6 or x2 > img_size + 1e-6 or y2 > img_size + 1e-6:
                    raise ValueError(f"target {b} lies outside the {img_size}px image")
    cells = assign_targets(targets, shapes, strides)

    obj_terms = []
    n_cells = 0
    box_preds, box_tgts = [], []
    for lvl, (r, stride) in enumerate(zip(outputs, strides)):
        labels = np.zeros((r.shape[0],) + tuple(shapes[lvl]))
        idx = [(bi, row, col, b) for (l, bi, row, col), b in cells.items() if l == lvl]
        for bi, row, col, _ in idx:
            labels[bi, row, col] = 1.0
        obj_terms.append(F.bce_with_logits(r[:, 4], labels).sum())
        n_cells += labels.size
        if idx:
            bi, rows, cols = (np.array(v) for v in zip(*[(i[0], i[1], i[2]) for i in idx]))
            raw = _gather(r, bi, rows, cols)
            cx = (F.sigmoid(raw[:, 0]) + cols) * float(stride)
            cy = (F.sigmoid(raw[:, 1]) + rows) * float(stride)
            bw = clamp(raw[:, 2], -TW_CLAMP, TW_CLAMP).exp() * float(stride)
            bh = clamp(raw[:, 3], -TW_CLAMP, TW_CLAMP).exp() * float(stride)
            box_preds.append(concat([cx.reshape(-1, 1), cy.reshape(-1, 1), bw.reshape(-1, 1), bh.reshape(-1, 1)], 1))
            box_tgts.append(np.array([i[3].as_array() for i in idx]))

    obj_term = obj_terms[0]
    for t in obj_terms[1:]:
        obj_term = obj_term + t
    obj_term = obj_term * (1.0 / n_cells)
    if box_preds:
        pred = concat(box_preds, 0) if len(box_preds) > 1 else box_preds[0]
        box_term = box_loss_t(pred, np.concatenate(box_tgts, 0), loss_kind).mean()
    else:
        box_term = Tensor(0.0)
    total = box_term + obj_term * obj_weight
    return total, box_term, obj_term


def _gather(r: Tensor, bi, rows, cols) -> Tensor:
    """Rows of raw predictions (N, 4) at the given batch/cell indices."""
    t = r.transpose(0, 2, 3, 1)
    return t[bi, rows, cols][:, :4]
