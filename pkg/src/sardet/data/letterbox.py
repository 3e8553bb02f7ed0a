from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..boxes import BBox

PAD_VALUE = 114.0 / 255.0


@dataclass(frozen=True)
class LetterboxInfo:
    scale: float
    pad_x: int  # left padding in output pixels
    pad_y: int  # top padding

    def forward(self, b: BBox) -> BBox:
        return BBox(b.cx * self.scale + self.pad_x, b.cy * self.scale + self.pad_y, b.w * self.scale, b.h * self.scale)

    def inverse(self, b: BBox) -> BBox:
        s = self.scale
        return BBox((b.cx - self.pad_x) / s, (b.cy - self.pad_y) / s, b.w / s, b.h / s)


def letterbox(image: np.ndarray, boxes: list[BBox], target: int):
    """Aspect-preserving resize of a (C, H, W) image into a ``target`` square.

    The scaled image is centered with constant padding; boxes follow the same
    transform.  Returns (image', boxes', LetterboxInfo).
    """
    if target % 32:
        raise ValueError(f"letterbox target must be divisible by 32, got {target}")
    C, H, W = image.shape
    s = target / max(H, W)
    nh, nw = min(target, round(H * s)), min(target, round(W * s))
    if (nh, nw) == (H, W):
        resized = image.astype(np.float64)
    else:
        resized = ndimage.zoom(image.astype(np.float64), (1, nh / H, nw / W), order=1, grid_mode=True, mode="nearest")
    pad_y, pad_x = (target - nh) // 2, (target - nw) // 2
    out = np.full((C, target, target), PAD_VALUE)
    out[:, pad_y : pad_y + nh, pad_x : pad_x + nw] = resized
    info = LetterboxInfo(s, pad_x, pad_y)
    return out, [info.forward(b) for b in boxes], info
