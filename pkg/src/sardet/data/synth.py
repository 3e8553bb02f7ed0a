"""Synthetic SAR scenes: smooth sea clutter, bright rectangular ships, and
multiplicative gamma speckle.

A scene describes a ``nominal_size`` square chip (the "original" image that
annotations refer to) rendered directly at ``image_size`` pixels.  Size
classes follow the usual area cut-offs of 32^2 and 96^2 nominal pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..boxes import BBox
from ..rng import Rng
from .annotations import Annotation

SMALL_MAX = 32.0**2
MEDIUM_MAX = 96.0**2


def size_class(area: float) -> int:
    """0 = small, 1 = medium, 2 = large."""
    return 0 if area < SMALL_MAX else (1 if area < MEDIUM_MAX else 2)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    nominal_size: int = 256
    ships_per_image: tuple = (1, 4)
    size_mix: tuple = (0.602, 0.368, 0.030)
    # ranges of sqrt(area) per class, nominal pixels
    small_side: tuple = (20.0, 32.0)
    medium_side: tuple = (32.0, 96.0)
    large_side: tuple = (96.0, 140.0)
    max_aspect: float = 2.5
    speckle_looks: float = 4.0
    clutter_level: float = 0.15
    ship_intensity: tuple = (0.55, 0.9)
    seed: int = 0

    def __post_init__(self):
        if self.speckle_looks < 1:
            raise ValueError("speckle_looks must be >= 1")
        if self.image_size <= 0 or self.image_size % 32:
            raise ValueError("image_size must be a positive multiple of 32")
        if self.nominal_size < self.image_size:
            raise ValueError("nominal_size must be >= image_size")
        lo, hi = self.ships_per_image
        if lo < 0 or hi < lo:
            raise ValueError(f"bad ships_per_image range {self.ships_per_image}")
        if abs(sum(self.size_mix) - 1.0) > 1e-9 or min(self.size_mix) < 0:
            raise ValueError("size_mix must be a probability vector")
        if self.max_aspect < 1:
            raise ValueError("max_aspect must be >= 1")


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel [i, i+1) covered by the interval [lo, hi]."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(hi, edges + 1) - np.maximum(lo, edges), 0.0, 1.0)


def _sample_ship(gen: np.random.Generator, cfg: SynthConfig, cls: int, limit: float):
    lo, hi = (cfg.small_side, cfg.medium_side, cfg.large_side)[cls]
    side = gen.uniform(lo, hi)
    aspect = math.exp(gen.uniform(0.0, math.log(cfg.max_aspect)))
    w, h = side * math.sqrt(aspect), side / math.sqrt(aspect)
    if gen.random() < 0.5:
        w, h = h, w
    # keep the area (and so the size class) while fitting the chip
    if max(w, h) > limit:
        f = limit / max(w, h)
        w, h = (w * f, h / f) if w > h else (w / f, h * f)
    return w, h


def _overlaps(b: BBox, others: list[BBox], margin: float) -> bool:
    x1, y1, x2, y2 = b.corners()
    for o in others:
        ox1, oy1, ox2, oy2 = o.corners()
        if x1 < ox2 + margin and ox1 < x2 + margin and y1 < oy2 + margin and oy1 < y2 + margin:
            return True
    return False


def generate_scene(cfg: SynthConfig, index: int) -> tuple[np.ndarray, Annotation]:
    """Render scene ``index``; returns a (1, 3, S, S) image in [0, 1] and its annotation.

    The annotation is in nominal-chip pixels; the image is that chip scaled
    by ``image_size / nominal_size``.
    """
    gen = Rng(cfg.seed).split("scene", index).generator()
    S, N = cfg.image_size, cfg.nominal_size
    scale = S / N

    lo, hi = cfg.ships_per_image
    n_ships = int(gen.integers(lo, hi + 1))
    classes = gen.choice(3, size=n_ships, p=np.asarray(cfg.size_mix))
    sizes = [_sample_ship(gen, cfg, int(c), 0.9 * N) for c in classes]
    sizes.sort(key=lambda wh: -wh[0] * wh[1])

    boxes: list[BBox] = []
    margin = 2.0 / scale
    for w, h in sizes:
        for _ in range(100):
            cx = gen.uniform(w / 2 + 1, N - w / 2 - 1)
            cy = gen.uniform(h / 2 + 1, N - h / 2 - 1)
            cand = BBox(cx, cy, w, h)
            if not _overlaps(cand, boxes, margin):
                boxes.append(cand)
                break

    clutter = ndimage.gaussian_filter(gen.standard_normal((S, S)), sigma=3.0, mode="wrap")
    clutter = clutter / (clutter.std() + 1e-12)
    field = cfg.clutter_level * np.exp(0.35 * clutter)
    for b in boxes:
        x1, y1, x2, y2 = (v * scale for v in b.corners())
        cover = np.outer(_coverage(y1, y2, S), _coverage(x1, x2, S))
        field = field * (1.0 - cover) + gen.uniform(*cfg.ship_intensity) * cover
    speckle = gen.gamma(cfg.speckle_looks, 1.0 / cfg.speckle_looks, size=(S, S))
    img = np.clip(field * speckle, 0.0, 1.0)
    image = np.broadcast_to(img, (1, 3, S, S)).copy()
    return image, Annotation(f"{index:06d}", boxes, (N, N), "synthetic")
