"""Differentiable primitives used by the network blocks."""

from __future__ import annotations

import math

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ShapeError, Tensor, as_tensor, concat, crop2d, make_result, pad2d, reshape, transpose

# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_np(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid_np(xd)
    return make_result(xd * s, (x,), lambda g: (g * (s * (1.0 + xd * (1.0 - s))),), "silu")


def gelu(x: Tensor, exact: bool = False) -> Tensor:
    """GELU; tanh approximation by default, erf form when ``exact``."""
    xd = x.data
    if exact:
        from scipy.special import erf

        cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
        pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
        return make_result(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")
    x2 = xd * xd
    inner = _GELU_C * xd * (1.0 + _GELU_K * x2)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_K * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result(out, (x,), _bw, "gelu")


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "silu": silu, "gelu": gelu, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (numerically stable form)."""
    z = logits.data
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    s = _sigmoid_np(z)
    return make_result(out, (logits,), lambda g: (g * (s - t),), "bce_with_logits")


# ---------------------------------------------------------------------------
# linear / convolution
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", "in_features", weight.shape[1], x.shape[-1])
    out = x @ transpose(weight, (1, 0))
    return out + bias if bias is not None else out


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _conv_dense(xp: np.ndarray, w: np.ndarray, stride: int, Ho: int, Wo: int):
    """groups=1 convolution on an already padded input; returns out and a backward fn."""
    O, C, k, _ = w.shape
    B = xp.shape[0]
    if k == 1:
        xs = xp[:, :, : stride * (Ho - 1) + 1 : stride, : stride * (Wo - 1) + 1 : stride]
        xs2 = np.ascontiguousarray(xs).reshape(B, C, Ho * Wo)
        w2 = w.reshape(O, C)
        out = np.matmul(w2, xs2).reshape(B, O, Ho, Wo)

        def bw(g):
            g2 = g.reshape(B, O, Ho * Wo)
            gw = np.einsum("boh,bch->oc", g2, xs2, optimize=True).reshape(O, C, 1, 1)
            gxs = np.matmul(w2.T, g2).reshape(B, C, Ho, Wo)
            gxp = np.zeros(xp.shape)
            gxp[:, :, : stride * (Ho - 1) + 1 : stride, : stride * (Wo - 1) + 1 : stride] = gxs
            return gxp, gw

        return out, bw

    cols = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * k * k)
    w2 = w.reshape(O, C * k * k)
    out = (cols @ w2.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (g2.T @ cols).reshape(O, C, k, k)
        gcols = np.ascontiguousarray((g2 @ w2).reshape(B, Ho, Wo, C, k, k).transpose(4, 5, 0, 3, 1, 2))
        gxp = np.zeros(xp.shape)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + hs : stride, j : j + ws : stride] += gcols[i, j]
        return gxp, gw

    return np.ascontiguousarray(out), bw


@numba.njit(cache=True, fastmath=False)
def _dw_forward(xr, w, stride, Ho, Wo):
    B, O = xr.shape[0], xr.shape[1]
    k = w.shape[1]
    out = np.zeros((B, O, Ho, Wo))
    for b in range(B):
        for o in range(O):
            for i in range(k):
                for j in range(k):
                    wv = w[o, i, j]
                    for y in range(Ho):
                        row = xr[b, o, y * stride + i]
                        dst = out[b, o, y]
                        for x in range(Wo):
                            dst[x] += row[x * stride + j] * wv
    return out


@numba.njit(cache=True, fastmath=False)
def _dw_backward(g, xr, w, stride):
    B, O, Ho, Wo = g.shape
    k = w.shape[1]
    gw = np.zeros(w.shape)
    gxr = np.zeros(xr.shape)
    for b in range(B):
        for o in range(O):
            for i in range(k):
                for j in range(k):
                    wv = w[o, i, j]
                    acc = 0.0
                    for y in range(Ho):
                        grow = g[b, o, y]
                        xrow = xr[b, o, y * stride + i]
                        drow = gxr[b, o, y * stride + i]
                        for x in range(Wo):
                            acc += grow[x] * xrow[x * stride + j]
                            drow[x * stride + j] += grow[x] * wv
                    gw[o, i, j] += acc
    return gxr, gw


def _conv_depthwise(xp: np.ndarray, w: np.ndarray, stride: int, Ho: int, Wo: int):
    """groups == C_in convolution, channel multiplier O // C_in."""
    O, _, k, _ = w.shape
    B, C = xp.shape[:2]
    m = O // C
    xr = np.ascontiguousarray(np.repeat(xp, m, axis=1) if m > 1 else xp)
    w3 = np.ascontiguousarray(w[:, 0])
    out = _dw_forward(xr, w3, stride, Ho, Wo)

    def bw(g):
        gxr, gw = _dw_backward(np.ascontiguousarray(g), xr, w3, stride)
        if m > 1:
            gxr = gxr.reshape(B, C, m, *xp.shape[2:]).sum(axis=2)
        return gxr, gw.reshape(w.shape)

    return out, bw


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over NCHW input with square kernels."""
    if x.ndim != 4:
        raise ShapeError("conv2d", "rank", 4, x.ndim)
    B, C, H, W = x.shape
    O, Cg, k, k2 = weight.shape
    if k != k2 or k < 1:
        raise ShapeError("conv2d", "kernel", "square k>=1", (k, k2))
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if groups < 1 or C % groups or O % groups:
        raise ShapeError("conv2d", "channels", f"divisible by groups={groups}", (C, O))
    if Cg != C // groups:
        raise ShapeError("conv2d", "weight in_channels", C // groups, Cg)
    if bias is not None and bias.shape != (O,):
        raise ShapeError("conv2d", "bias", (O,), bias.shape)
    Ho, Wo = _out_size(H, k, stride, padding), _out_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ShapeError("conv2d", "spatial", f">= {k - 2 * padding}", (H, W))

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    wd = weight.data
    if groups == 1:
        out, kernel_bw = _conv_dense(xp, wd, stride, Ho, Wo)
    elif groups == C and Cg == 1:
        out, kernel_bw = _conv_depthwise(xp, wd, stride, Ho, Wo)
    else:
        og = O // groups
        parts = [
            _conv_dense(xp[:, g * Cg : (g + 1) * Cg], wd[g * og : (g + 1) * og], stride, Ho, Wo) for g in range(groups)
        ]
        out = np.concatenate([p[0] for p in parts], axis=1)

        def kernel_bw(g):
            gx_parts, gw_parts = zip(*(p[1](g[:, i * og : (i + 1) * og]) for i, p in enumerate(parts)))
            return np.concatenate(gx_parts, axis=1), np.concatenate(gw_parts, axis=0)

    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _bw(g):
        gxp, gw = kernel_bw(g)
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, parents, _bw, "conv2d")


def conv2d_reference(x: np.ndarray, w: np.ndarray, b=None, stride: int = 1, padding: int = 0, groups: int = 1):
    """Direct nested-loop convolution; slow, used as a correctness oracle."""
    B, C, H, W = x.shape
    O, Cg, k, _ = w.shape
    Ho, Wo = _out_size(H, k, stride, padding), _out_size(W, k, stride, padding)
    xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding))
    xp[:, :, padding : padding + H, padding : padding + W] = x
    og = O // groups
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            g = o // og
            for yo in range(Ho):
                for xo in range(Wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(Cg):
                        for i in range(k):
                            for j in range(k):
                                acc += xp[n, g * Cg + c, yo * stride + i, xo * stride + j] * w[o, c, i, j]
                    out[n, o, yo, xo] = acc
    return out


# ---------------------------------------------------------------------------
# normalization / regularization
# ---------------------------------------------------------------------------

def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    In training mode the running buffers are updated in place (unbiased
    variance, exponential average with ``momentum``).
    """
    if eps <= 0:
        raise ValueError("batch_norm2d: eps must be positive")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("batch_norm2d", "channel", C, gamma.shape)
    xd, gd, bd = x.data, gamma.data, beta.data
    if training:
        n = B * H * W
        if n == 0:
            raise ValueError("batch_norm2d: empty batch in training mode")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mean[None, :, None, None]) * invstd[None, :, None, None]
        out = xhat * gd[None, :, None, None] + bd[None, :, None, None]

        def _bw(g):
            gbeta = g.sum(axis=(0, 2, 3))
            ggamma = (g * xhat).sum(axis=(0, 2, 3))
            dxhat = g * gd[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            gx = (invstd[None, :, None, None] / n) * (n * dxhat - s1 - xhat * s2)
            return gx, ggamma, gbeta

    else:
        invstd = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean[None, :, None, None]) * invstd[None, :, None, None]
        out = xhat * gd[None, :, None, None] + bd[None, :, None, None]

        def _bw(g):
            return (
                g * (gd * invstd)[None, :, None, None],
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)),
            )

    return make_result(out, (x, gamma, beta), _bw, "batch_norm2d")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# pooling / resampling / patches
# ---------------------------------------------------------------------------

def maxpool2d(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    stride = k if stride is None else stride
    B, C, H, W = x.shape
    Ho, Wo = _out_size(H, k, stride, padding), _out_size(W, k, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding,) * 2, (padding,) * 2), constant_values=-np.inf)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    win = win.reshape(B, C, Ho, Wo, k * k)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        gxp = np.zeros(xp.shape)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + hs : stride, j : j + ws : stride] += g * (idx == i * k + j)
        return (gxp[:, :, padding : padding + H, padding : padding + W],)

    return make_result(np.ascontiguousarray(out), (x,), _bw, "maxpool2d")


def upsample_nearest2x(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return make_result(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),), "upsample2x")


def unfold(x: Tensor, patch: int) -> Tensor:
    """Split NCHW maps into non-overlapping ``patch x patch`` tiles.

    Returns shape (B, N, C, patch*patch) with N tiles in row-major order.
    Spatial extents that are not multiples of ``patch`` are zero-padded at
    the bottom/right first.
    """
    if patch <= 0:
        raise ValueError(f"unfold: patch must be positive, got {patch}")
    B, C, H, W = x.shape
    Hp, Wp = -(-H // patch) * patch, -(-W // patch) * patch
    x = pad2d(x, 0, Hp - H, 0, Wp - W)
    nh, nw = Hp // patch, Wp // patch
    t = reshape(x, (B, C, nh, patch, nw, patch))
    t = transpose(t, (0, 2, 4, 1, 3, 5))
    return reshape(t, (B, nh * nw, C, patch * patch))


def fold(t: Tensor, patch: int, H: int, W: int) -> Tensor:
    """Inverse of :func:`unfold`; crops any padding back to ``H x W``."""
    B, N, C, pp = t.shape
    if pp != patch * patch:
        raise ShapeError("fold", "patch area", patch * patch, pp)
    nh, nw = -(-H // patch), -(-W // patch)
    if N != nh * nw:
        raise ShapeError("fold", "tiles", nh * nw, N)
    x = reshape(t, (B, nh, nw, C, patch, patch))
    x = transpose(x, (0, 3, 1, 4, 2, 5))
    x = reshape(x, (B, C, nh * patch, nw * patch))
    return crop2d(x, H, W)


__all__ = [
    "activation",
    "as_tensor",
    "batch_norm2d",
    "bce_with_logits",
    "concat",
    "conv2d",
    "conv2d_reference",
    "dropout",
    "fold",
    "gelu",
    "linear",
    "maxpool2d",
    "relu",
    "sigmoid",
    "silu",
    "softmax",
    "unfold",
    "upsample_nearest2x",
]
