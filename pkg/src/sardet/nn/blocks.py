"""Denoising stem, patch-aware attention, and the YOLO-style conv blocks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..rng import Rng
from ..tensor import functional as F
from ..tensor.core import Tensor, concat, mul
from .module import CBL, CBR, BatchNorm2d, Conv2d, Linear, Module


@dataclass
class CidConfig:
    in_channels: int = 3
    embed_channels: int = 64
    dw_kernel: int = 7
    mlp_ratio: int = 4
    output_mode: str = "shortest_path"  # or "residual"
    exact_gelu: bool = False

    def __post_init__(self):
        if self.dw_kernel % 2 == 0:
            raise ValueError("dw_kernel must be odd")
        if self.embed_channels <= 0 or self.mlp_ratio <= 0:
            raise ValueError("embed_channels and mlp_ratio must be positive")
        if self.output_mode not in ("shortest_path", "residual"):
            raise ValueError(f"unknown CID output mode {self.output_mode!r}")
        if self.output_mode == "residual" and self.in_channels != self.embed_channels:
            raise ValueError("residual output needs in_channels == embed_channels")


class CID(Module):
    """Channel-independent denoising: 1x1 stem, large-kernel depthwise conv,
    pointwise MLP, projection and BatchNorm."""

    def __init__(self, rng: Rng, cfg: CidConfig):
        super().__init__()
        self.cfg = cfg
        E, hidden = cfg.embed_channels, cfg.embed_channels * cfg.mlp_ratio
        self.stem = Conv2d(rng.split("stem"), cfg.in_channels, E, 1) if cfg.output_mode == "shortest_path" else None
        self.dw = Conv2d(rng.split("dw"), E, E, cfg.dw_kernel, groups=E)
        self.fc1 = Conv2d(rng.split("fc1"), E, hidden, 1)
        self.fc2 = Conv2d(rng.split("fc2"), hidden, E, 1)
        self.proj = Conv2d(rng.split("proj"), E, E, 1)
        self.bn = BatchNorm2d(E)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"CID expects {self.cfg.in_channels} input channels, got {x.shape[1]}")
        h = self.stem(x) if self.stem is not None else x
        y = self.fc2(F.gelu(self.fc1(self.dw(h)), exact=self.cfg.exact_gelu))
        y = self.bn(self.proj(y))
        return y + x if self.cfg.output_mode == "residual" else y


@dataclass
class PpaConfig:
    channels: int = 64
    pa_channels: int | None = None  # C'; defaults to channels
    patch_sizes: tuple = (2, 4)
    select_token_ratio: float = 1.0
    select_channel_ratio: float = 1.0
    dropout_p: float = 0.1
    ca_reduction: int = 8
    sa_kernel: int = 7

    def __post_init__(self):
        for r in (self.select_token_ratio, self.select_channel_ratio):
            if not 0.0 < r <= 1.0:
                raise ValueError("selection ratios must lie in (0, 1]")
        if self.sa_kernel % 2 == 0:
            raise ValueError("sa_kernel must be odd")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.pa_channels is None:
            self.pa_channels = self.channels


def _topk_mask(scores: np.ndarray, ratio: float) -> np.ndarray:
    """1.0 for the top ceil(ratio * n) entries along the last axis, else 0.0."""
    n = scores.shape[-1]
    k = math.ceil(ratio * n)
    if k >= n:
        return np.ones_like(scores)
    order = np.argsort(-scores, axis=-1, kind="stable")
    mask = np.zeros_like(scores)
    np.put_along_axis(mask, order[..., :k], 1.0, axis=-1)
    return mask


class PatchAware(Module):
    """Patch-aware branch: tile, average each tile, FFN, spatial softmax
    re-weighting, channel/token selection, then paint each tile's vector
    back over its pixels."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, patch: int, token_ratio=1.0, channel_ratio=1.0):
        super().__init__()
        if patch not in (2, 4):
            raise ValueError(f"patch size must be 2 or 4, got {patch}")
        self.patch = patch
        self.token_ratio, self.channel_ratio = token_ratio, channel_ratio
        self.pre = CBR(rng.split("pre"), c_in, c_in, 1)
        self.ffn1 = Linear(rng.split("ffn1"), c_in, 2 * c_in)
        self.ffn2 = Linear(rng.split("ffn2"), 2 * c_in, c_out)

    def tokens(self, x: Tensor) -> Tensor:
        """Scaled, selected patch tokens of shape (B, N, C')."""
        t = F.unfold(self.pre(x), self.patch).mean(axis=-1)
        pa1 = self.ffn2(F.gelu(self.ffn1(t)))
        pa = F.softmax(pa1, axis=1) * pa1
        mag = np.abs(pa.data)
        mask_c = _topk_mask(mag.mean(axis=1), self.channel_ratio)[:, None, :]
        mask_t = _topk_mask((mag * mask_c).mean(axis=2), self.token_ratio)[:, :, None]
        if mask_c.all() and mask_t.all():
            return pa
        return mul(pa, mask_c * mask_t)

    def forward(self, x: Tensor) -> Tensor:
        B, _, H, W = x.shape
        t = self.tokens(x)
        N, C = t.shape[1:]
        p2 = self.patch * self.patch
        tiles = mul(t.reshape(B, N, C, 1), np.ones((1, 1, 1, p2)))
        return F.fold(tiles, self.patch, H, W)


class ChannelAttention(Module):
    def __init__(self, rng: Rng, c: int, reduction: int):
        super().__init__()
        hidden = max(1, c // reduction)
        self.fc1 = Linear(rng.split("fc1"), c, hidden)
        self.fc2 = Linear(rng.split("fc2"), hidden, c)

    def forward(self, x: Tensor) -> Tensor:
        s = x.mean(axis=(2, 3))
        return F.sigmoid(self.fc2(F.relu(self.fc1(s))))


class SpatialAttention(Module):
    def __init__(self, rng: Rng, k: int):
        super().__init__()
        self.conv = Conv2d(rng.split("conv"), 2, 1, k)

    def forward(self, x: Tensor) -> Tensor:
        pooled = concat([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
        return F.sigmoid(self.conv(pooled))


class PPA(Module):
    """Parallelized patch-aware attention with cascaded channel and spatial gates."""

    def __init__(self, rng: Rng, cfg: PpaConfig):
        super().__init__()
        self.cfg = cfg
        C, Cp = cfg.channels, cfg.pa_channels
        self.pw = Conv2d(rng.split("pw"), C, C, 1)
        self.serial = [CBR(rng.split("serial", i), C, C, 3) for i in range(3)]
        self.patch_branches = [
            PatchAware(rng.split("pa", p), C, Cp, p, cfg.select_token_ratio, cfg.select_channel_ratio)
            for p in cfg.patch_sizes
        ]
        self.patch_proj = [Conv2d(rng.split("proj", p), Cp, C, 1) for p in cfg.patch_sizes] if Cp != C else []
        self.fuse = Conv2d(rng.split("fuse"), C, C, 3)
        self.ca = ChannelAttention(rng.split("ca"), C, cfg.ca_reduction)
        self.sa = SpatialAttention(rng.split("sa"), cfg.sa_kernel)
        self.bn = BatchNorm2d(C)
        self.dropout_rng: np.random.Generator | None = None
        self.last_gates: tuple[np.ndarray, np.ndarray] | None = None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.cfg.channels:
            raise ValueError(f"PPA expects {self.cfg.channels} channels, got {x.shape[1]}")
        total = self.pw(x)
        h = x
        for unit in self.serial:
            h = unit(h)
            total = total + h
        for i, branch in enumerate(self.patch_branches):
            feat = branch(x)
            if self.patch_proj:
                feat = self.patch_proj[i](feat)
            total = total + feat
        xb = self.fuse(total)
        a_c = self.ca(xb)
        xc = xb * a_c.reshape(*a_c.shape, 1, 1)
        a_s = self.sa(xc)
        xs = xc * a_s
        self.last_gates = (a_c.data, a_s.data)
        out = F.dropout(xs, self.cfg.dropout_p, self.training, self.dropout_rng)
        return F.relu(self.bn(out))


class Bottleneck(Module):
    def __init__(self, rng: Rng, c: int, shortcut: bool = True):
        super().__init__()
        self.cv1 = CBL(rng.split("cv1"), c, c, 3)
        self.cv2 = CBL(rng.split("cv2"), c, c, 3)
        self.shortcut = shortcut

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        return x + y if self.shortcut else y


class C2fLite(Module):
    """Split / bottleneck chain / concat block with ``n`` bottlenecks."""

    def __init__(self, rng: Rng, c_in: int, c_out: int, n: int = 2, shortcut: bool = True):
        super().__init__()
        self.c = max(1, c_out // 2)
        self.cv1 = CBL(rng.split("cv1"), c_in, 2 * self.c, 1)
        self.blocks = [Bottleneck(rng.split("m", i), self.c, shortcut) for i in range(n)]
        self.cv2 = CBL(rng.split("cv2"), (2 + n) * self.c, c_out, 1)

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv1(x)
        parts = [y[:, : self.c], y[:, self.c :]]
        for blk in self.blocks:
            parts.append(blk(parts[-1]))
        return self.cv2(concat(parts, axis=1))


class SPPF(Module):
    """Three chained same-padding max pools, concatenated with the input and projected back."""

    def __init__(self, rng: Rng, c: int, k: int = 5):
        super().__init__()
        self.k = k
        self.cv = CBL(rng.split("cv"), 4 * c, c, 1)

    def forward(self, x: Tensor) -> Tensor:
        pad = self.k // 2
        y1 = F.maxpool2d(x, self.k, 1, pad)
        y2 = F.maxpool2d(y1, self.k, 1, pad)
        y3 = F.maxpool2d(y2, self.k, 1, pad)
        return self.cv(concat([x, y1, y2, y3], axis=1))
