"""Parameter containers and the basic conv/norm/linear layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..rng import Rng
from ..tensor import functional as F
from ..tensor.core import Tensor


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    numpy arrays registered in ``self._buffers``.  Child modules may be plain
    attributes or lists of modules.
    """

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, m in enumerate(val):
                    if isinstance(m, Module):
                        yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                yield prefix + name, val
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in self._buffers.items():
            yield prefix + name, buf
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param/{k}": v.data.copy() for k, v in self.named_parameters()}
        state.update({f"buffer/{k}": v.copy() for k, v in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = {f"param/{k}" for k in params} | {f"buffer/{k}" for k in buffers}
        missing, unexpected = expected - state.keys(), state.keys() - expected
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)[:5]} unexpected={sorted(unexpected)[:5]}")
        for k, p in params.items():
            src = state[f"param/{k}"]
            if src.shape != p.shape:
                raise ValueError(f"{k}: shape {src.shape} != {p.shape}")
            p.data = np.array(src, dtype=np.float64)
        for k, b in buffers.items():
            b[...] = state[f"buffer/{k}"]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def kaiming_uniform(rng: Rng, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.generator().uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, rng: Rng, c_in, c_out, k=1, stride=1, padding=None, groups=1, bias=True):
        super().__init__()
        self.stride, self.groups = stride, groups
        self.padding = k // 2 if padding is None else padding
        fan_in = (c_in // groups) * k * k
        self.weight = Tensor(kaiming_uniform(rng.split("weight"), (c_out, c_in // groups, k, k), fan_in), True)
        self.bias = Tensor(np.zeros(c_out), True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Linear(Module):
    def __init__(self, rng: Rng, c_in, c_out, bias=True):
        super().__init__()
        self.weight = Tensor(kaiming_uniform(rng.split("weight"), (c_out, c_in), c_in), True)
        self.bias = Tensor(np.zeros(c_out), True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        b = self._buffers
        return F.batch_norm2d(
            x, self.gamma, self.beta, b["running_mean"], b["running_var"], self.training, self.momentum, self.eps
        )


class ConvBNAct(Module):
    """Conv (no bias) -> BatchNorm -> activation.  ``act='silu'`` is the CBL unit, ``'relu'`` the CBR unit."""

    def __init__(self, rng: Rng, c_in, c_out, k=1, stride=1, act="silu"):
        super().__init__()
        self.conv = Conv2d(rng.split("conv"), c_in, c_out, k, stride, bias=False)
        self.bn = BatchNorm2d(c_out)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        return F.activation(self.bn(self.conv(x)), self.act)


def CBL(rng, c_in, c_out, k=1, stride=1) -> ConvBNAct:
    return ConvBNAct(rng, c_in, c_out, k, stride, act="silu")


def CBR(rng, c_in, c_out, k=1, stride=1) -> ConvBNAct:
    return ConvBNAct(rng, c_in, c_out, k, stride, act="relu")
