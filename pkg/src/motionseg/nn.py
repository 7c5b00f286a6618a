"""Small layer/module system on top of the autodiff tensors.

Modules register parameters and child modules by attribute assignment order,
so parameter iteration (and therefore optimizer update order and checkpoint
layout) is deterministic.
"""

from __future__ import annotations

from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor


class Parameter(Tensor):
    """A leaf tensor that is trained (requires_grad on by default)."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Base class: tracks parameters, buffers and children in definition order."""

    def __init__(self):
        self.training = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")
        for name, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", value

    def parameters(self) -> Dict[str, Parameter]:
        return dict(self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: buf for name, buf in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        missing = (set(own_params) | set(own_buffers)) - set(state)
        extra = set(state) - (set(own_params) | set(own_buffers))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for name, p in own_params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ShapeError(f"parameter '{name}' shape {arr.shape} != expected {p.shape}")
            p.data = np.ascontiguousarray(arr)
        for name, buf in own_buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ShapeError(f"buffer '{name}' shape {arr.shape} != expected {buf.shape}")
            buf[...] = arr


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, rng: Optional[np.random.Generator] = None,
                 weight_std: Optional[float] = None, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        if weight_std is None:
            w = he_init(rng, (out_channels, in_channels, k, k), in_channels * k * k, dtype)
        else:
            w = (rng.standard_normal((out_channels, in_channels, k, k)) * weight_std).astype(dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    __call__ = forward


class BatchNorm2d(Module):
    """Per-channel normalization with running statistics.

    Training uses batch statistics over (N, H, W) and requires N >= 2 unless
    ``allow_batch1`` switches single-sample batches to per-sample (instance)
    statistics.  Evaluation always uses the running estimates.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 allow_batch1: bool = False, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.allow_batch1 = allow_batch1
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ShapeError(f"BatchNorm2d expects NCHW, got {x.ndim}-D")
        n, c = x.shape[0], x.shape[1]
        if self.training:
            if n == 1 and not self.allow_batch1:
                raise ShapeError(
                    "BatchNorm2d: training with batch size 1 needs allow_batch1 (instance-stat fallback)"
                )
            axes = (2, 3) if n == 1 else (0, 2, 3)
            mu = x.data.mean(axis=axes, keepdims=True)
            var = x.data.var(axis=axes, keepdims=True)
            xhat = ops.normalize_moments(x, axes=axes, eps=self.eps, stats=(mu, var))
            count = int(np.prod([x.shape[a] for a in axes]))
            mu_c = mu.reshape(-1) if n > 1 else mu[0].reshape(-1)
            var_c = var.reshape(-1) if n > 1 else var[0].reshape(-1)
            unbiased = var_c * (count / max(count - 1, 1))
            rm, rv = self._buffers["running_mean"], self._buffers["running_var"]
            rm[...] = (1 - self.momentum) * rm + self.momentum * mu_c
            rv[...] = (1 - self.momentum) * rv + self.momentum * unbiased
        else:
            rm = self._buffers["running_mean"].reshape(1, c, 1, 1)
            inv = (1.0 / np.sqrt(self._buffers["running_var"] + self.eps)).reshape(1, c, 1, 1)
            xhat = ops.mul(ops.sub(x, Tensor(rm)), Tensor(inv.astype(x.dtype)))
        scaled = ops.mul(xhat, self.gamma.reshape(1, c, 1, 1))
        return ops.add(scaled, self.beta.reshape(1, c, 1, 1))

    __call__ = forward


class ConvBlock(Module):
    """conv3x3 -> batchnorm -> relu."""

    def __init__(self, in_channels: int, out_channels: int, rng, stride: int = 1,
                 allow_batch1: bool = False):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, stride=stride, padding=1, rng=rng)
        self.bn = BatchNorm2d(out_channels, allow_batch1=allow_batch1)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))

    __call__ = forward


class ResBlock(Module):
    """Two conv-bn stages with an additive skip (Johnson-style residual)."""

    def __init__(self, channels: int, rng, allow_batch1: bool = False):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, padding=1, rng=rng)
        self.bn1 = BatchNorm2d(channels, allow_batch1=allow_batch1)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(channels, allow_batch1=allow_batch1)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return ops.add(x, h)

    __call__ = forward
