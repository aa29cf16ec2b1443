"""Pyramid Attention Network.

The N x C point-feature map is treated as a single-channel 2-D grid. Four
branches convolve it with different kernel sizes and strides, normalise,
rectify, and resize back to N x C with bilinear interpolation. The branch
outputs are concatenated along a new channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError

REFERENCE_CHANNELS = 32


@dataclass
class PyramidConfig:
    branch_kernels: tuple = (1, 3, 5, 7)
    branch_strides: tuple = (1, 2, 4, 8)
    branch_channels: tuple = (8, 8, 8, 8)

    def validate(self, reference=True):
        lists = (self.branch_kernels, self.branch_strides, self.branch_channels)
        if any(len(v) != 4 for v in lists):
            raise ConfigError(f"pyramid needs exactly 4 branches, got {[len(v) for v in lists]}")
        if any(k < 1 or k % 2 == 0 for k in self.branch_kernels):
            raise ConfigError(f"pyramid kernels must be odd, got {self.branch_kernels}")
        if any(s < 1 for s in self.branch_strides):
            raise ConfigError(f"pyramid strides must be >= 1, got {self.branch_strides}")
        if any(c < 1 for c in self.branch_channels):
            raise ConfigError(f"pyramid channels must be >= 1, got {self.branch_channels}")
        if reference and sum(self.branch_channels) != REFERENCE_CHANNELS:
            raise ConfigError(
                f"pyramid channels {self.branch_channels} sum to {sum(self.branch_channels)}, "
                f"expected {REFERENCE_CHANNELS}"
            )
        return self

    @property
    def out_channels(self):
        return sum(self.branch_channels)


class PanBranch:
    """One pyramid level: strided KxK conv -> batch norm -> ReLU -> bilinear resize."""

    def __init__(self, kernel_size, stride, out_channels, rng, dtype=np.float32, std=0.1):
        if kernel_size % 2 == 0:
            raise ConfigError(f"pyramid kernel must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.stride = stride
        self.kernel = T.Tensor(
            T.truncated_normal(rng, (kernel_size, kernel_size, 1, out_channels), std, dtype),
            requires_grad=True,
        )
        self.bias = T.Tensor(np.zeros(out_channels, dtype), requires_grad=True)
        self.bn = T.BatchNormState.create(out_channels, dtype)

    def parameters(self):
        return {"kernel": self.kernel, "bias": self.bias, "bn.gamma": self.bn.gamma, "bn.beta": self.bn.beta}

    def __call__(self, x, training):
        return pan_branch(x, self, training)


def pan_branch(x, branch, training):
    """(..., N, C) -> (..., N, C, out_channels)."""
    lead = x.shape[:-2]
    n, c = x.shape[-2:]
    if branch.stride > n or branch.stride > c:
        raise ConfigError(f"pyramid stride {branch.stride} exceeds the {n}x{c} grid")
    grid = T.reshape(x, (-1, n, c, 1))
    y = T.conv2d(grid, branch.kernel, (branch.stride, branch.stride)) + branch.bias
    y = T.relu(T.batch_norm(y, branch.bn, training))
    y = T.bilinear_resize(y, (n, c))
    return T.reshape(y, lead + (n, c, y.shape[-1]))


class PyramidAttention:
    def __init__(self, config, rng, dtype=np.float32, check_reference=True):
        self.config = config.validate(reference=check_reference)
        self.branches = [
            PanBranch(k, s, ch, rng, dtype)
            for k, s, ch in zip(config.branch_kernels, config.branch_strides, config.branch_channels)
        ]

    def parameters(self):
        out = {}
        for i, b in enumerate(self.branches):
            for name, p in b.parameters().items():
                out[f"branch{i}.{name}"] = p
        return out

    def bn_states(self):
        return {f"branch{i}.bn": b.bn for i, b in enumerate(self.branches)}

    def __call__(self, x, training):
        return pan_forward(x, self, training)


def pan_forward(x, pan, training):
    """Run all branches on the (..., N, C) grid: output (..., N, C, sum(branch_channels))."""
    return T.concat([b(x, training) for b in pan.branches], axis=-1)


def pan_collapse(x):
    """Average over the C axis: (..., N, C, K) -> (..., N, 1, K)."""
    return T.global_avg_pool(x, axis=x.ndim - 2, keepdims=True)
