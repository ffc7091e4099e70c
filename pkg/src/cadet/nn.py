"""Minimal parameter-holding modules built on the tensor engine."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = ["Module", "Linear", "MLP", "LayerNorm", "Conv2d"]


class Module:
    """Base class providing recursive, name-stable parameter collection."""

    def parameters(self, prefix: str = "") -> dict:
        out = {}
        for name, value in self.__dict__.items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.parameters(prefix=f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.parameters(prefix=f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item
        return out

    def load_parameters(self, arrays: dict):
        """Copy raw arrays into this module's parameters by name."""
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise KeyError(f"parameter names do not match: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in params.items():
            arr = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"parameter '{name}' shape {arr.shape} != expected {tensor.data.shape}")
            tensor.data = arr.copy()
            tensor.grad = None


def _param(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    data = rng.standard_normal(shape) * scale
    return Tensor(data.astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    """Affine map on the last axis: y = x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 zero_init: bool = False, dtype=np.float64):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init:
            self.weight = _zeros((in_dim, out_dim), dtype)
        else:
            self.weight = _param(rng, (in_dim, out_dim), 1.0 / np.sqrt(in_dim), dtype)
        self.bias = _zeros((out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.in_dim))
        out = flat @ self.weight + self.bias
        return out.reshape(lead + (self.out_dim,))


class MLP(Module):
    """Two affine layers with one ReLU between them."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng,
                 zero_init_out: bool = False, dtype=np.float64):
        self.fc1 = Linear(in_dim, hidden_dim, rng, dtype=dtype)
        self.fc2 = Linear(hidden_dim, out_dim, rng, zero_init=zero_init_out, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = _zeros((dim,), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Conv2d(Module):
    """2D convolution over the trailing [H, W, C] axes (channels last).

    Leading axes are treated as batch. Implemented as zero padding,
    im2col patch extraction and one matmul.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng,
                 stride: int = 1, padding: int = 0, dtype=np.float64):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = kernel * kernel * in_channels
        self.weight = _param(rng, (fan_in, out_channels), 1.0 / np.sqrt(fan_in), dtype)
        self.bias = _zeros((out_channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_channels:
            raise T.ShapeError(f"conv2d expected {self.in_channels} channels, got shape {x.shape}")
        if self.padding:
            width = [(0, 0)] * (x.ndim - 3) + [(self.padding, self.padding),
                                               (self.padding, self.padding), (0, 0)]
            x = T.pad(x, width)
        patches = T.extract_patches(x, self.kernel, self.kernel, stride=self.stride)
        lead = patches.shape[:-3]
        flat = patches.reshape((-1, self.kernel * self.kernel * self.in_channels))
        out = flat @ self.weight + self.bias
        return out.reshape(lead + (self.out_channels,))
