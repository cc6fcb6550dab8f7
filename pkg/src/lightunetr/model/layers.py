"""Light-UNETR building blocks."""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from lightunetr.nn import (
    Activation,
    BatchNorm3d,
    Conv3d,
    ConvTranspose3d,
    LayerNorm3d,
    Module,
    ModuleList,
    SqueezeExcite,
)
from lightunetr.tensor import Tensor, ops


class OverlapPatchEmbed(Module):
    """Two stride-2 kernel-3 convolutions (overlapping windows), 4x spatial reduction."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        hidden = max(1, out_channels // 2)
        self.conv1 = Conv3d(in_channels, hidden, 3, stride=2, padding=1, rng=rng)
        self.norm = BatchNorm3d(hidden)
        self.act = Activation("gelu")
        self.conv2 = Conv3d(hidden, out_channels, 3, stride=2, padding=1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.act(self.norm(self.conv1(x))))

    def cost(self, shape, report, prefix=""):
        for name in ("conv1", "norm", "act", "conv2"):
            shape = getattr(self, name).cost(shape, report, f"{prefix}{name}.")
        return shape


class HighFrequencyBranch(Module):
    """Pointwise channel reduction, BN, GELU, then a grouped conv restoring the width."""

    def __init__(self, width: int, reduction: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        reduced = width // reduction
        self.reduce = Conv3d(width, reduced, 1, rng=rng)
        self.norm = BatchNorm3d(reduced)
        self.act = Activation("gelu")
        self.gconv = Conv3d(reduced, width, kernel, padding=kernel // 2, groups=reduced, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.gconv(self.act(self.norm(self.reduce(x))))

    def cost(self, shape, report, prefix=""):
        for name in ("reduce", "norm", "act", "gconv"):
            shape = getattr(self, name).cost(shape, report, f"{prefix}{name}.")
        return shape


class LIDR(Module):
    """Lightweight dimension-reductive attention.

    Average-pools by ``r``, splits channels into three equal parts, runs
    multi-head softmax attention on the first and two high-frequency conv
    branches on the others, concatenates, and restores the resolution with a
    stride-``r`` transposed depthwise convolution. With ``r == 1`` pooling and
    recovery are skipped.
    """

    def __init__(self, channels: int, r: int, heads: int, hf_reduction: int, kernels=(3, 5),
                 attention_scale: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.channels, self.r, self.heads = channels, r, heads
        width = channels // 3
        self.width = width
        self.head_dim = width // heads
        self.scale = 1.0 / math.sqrt(self.head_dim) if attention_scale else 1.0
        self.w_q = Conv3d(width, width, 1, rng=rng)
        self.w_k = Conv3d(width, width, 1, rng=rng)
        self.w_v = Conv3d(width, width, 1, rng=rng)
        self.high1 = HighFrequencyBranch(width, hf_reduction, kernels[0], rng)
        self.high2 = HighFrequencyBranch(width, hf_reduction, kernels[1], rng)
        self.recover = ConvTranspose3d(channels, channels, r, stride=r, groups=channels, rng=rng) if r > 1 else None
        self.keep_attention = False
        self.last_attention: Optional[np.ndarray] = None
        self.last_grid: Optional[tuple] = None

    def attend(self, x_low: Tensor) -> Tensor:
        b, c, z, y, w = x_low.shape
        t, h, d = z * y * w, self.heads, self.head_dim
        q = self.w_q(x_low).reshape(b, h, d, t).transpose(0, 1, 3, 2)
        k = self.w_k(x_low).reshape(b, h, d, t)
        v = self.w_v(x_low).reshape(b, h, d, t).transpose(0, 1, 3, 2)
        scores = q @ k
        if self.scale != 1.0:
            scores = scores * self.scale
        attn = ops.softmax(scores, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data
            self.last_grid = (z, y, w)
        out = attn @ v
        return out.transpose(0, 1, 3, 2).reshape(b, c, z, y, w)

    def forward(self, x: Tensor) -> Tensor:
        xs = ops.avg_pool3d(x, self.r)
        x_low, x_h1, x_h2 = ops.split(xs, 3, axis=1)
        out = ops.concat([self.attend(x_low), self.high1(x_h1), self.high2(x_h2)], axis=1)
        return self.recover(out) if self.recover is not None else out

    def cost(self, shape, report, prefix=""):
        c = shape[0]
        pooled = tuple(-(-n // self.r) for n in shape[1:])
        if self.r > 1:
            report.add(prefix + "pool", "pool", 0, elementwise=math.prod(shape))
        branch = (self.width,) + pooled
        for name in ("w_q", "w_k", "w_v"):
            getattr(self, name).cost(branch, report, f"{prefix}{name}.")
        t = math.prod(pooled)
        # QK^T and AV: T*T*d MACs per head each; softmax and scaling are elementwise
        report.add(prefix + "attention", "attention", 0, macs=2 * t * t * self.width,
                   elementwise=2 * self.heads * t * t)
        self.high1.cost(branch, report, prefix + "high1.")
        self.high2.cost(branch, report, prefix + "high2.")
        out = (c,) + pooled
        if self.recover is not None:
            out = self.recover.cost(out, report, prefix + "recover.")
        return (c,) + tuple(shape[1:])


class CGLU(Module):
    """Compact gated linear unit: W_rec(W_id x * sigmoid(W_gate x)), expansion 2."""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.w_id = Conv3d(channels, 2 * channels, 1, rng=rng)
        self.w_gate = Conv3d(channels, 2 * channels, 1, rng=rng)
        self.w_rec = Conv3d(2 * channels, channels, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.w_rec(self.w_id(x) * ops.sigmoid(self.w_gate(x)))

    def cost(self, shape, report, prefix=""):
        hidden = self.w_id.cost(shape, report, prefix + "w_id.")
        self.w_gate.cost(shape, report, prefix + "w_gate.")
        report.add(prefix + "gate", "activation", 0, elementwise=2 * math.prod(hidden))
        return self.w_rec.cost(hidden, report, prefix + "w_rec.")


class LightUNETRBlock(Module):
    """Depthwise conv residual, then repeated pre-norm LIDR and CGLU residuals."""

    def __init__(self, channels: int, r: int, heads: int, hf_reduction: int, kernels=(3, 5),
                 pairs: int = 2, dw_kernel: int = 3, attention_scale: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.dwconv = Conv3d(channels, channels, dw_kernel, padding=dw_kernel // 2, groups=channels, rng=rng)
        self.attn_norms = ModuleList()
        self.lidrs = ModuleList()
        self.mlp_norms = ModuleList()
        self.cglus = ModuleList()
        for _ in range(pairs):
            self.attn_norms.append(LayerNorm3d(channels))
            self.lidrs.append(LIDR(channels, r, heads, hf_reduction, kernels, attention_scale, rng))
            self.mlp_norms.append(LayerNorm3d(channels))
            self.cglus.append(CGLU(channels, rng))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.dwconv(x)
        for an, lidr, mn, cglu in zip(self.attn_norms, self.lidrs, self.mlp_norms, self.cglus):
            x = x + lidr(an(x))
            x = x + cglu(mn(x))
        return x

    def cost(self, shape, report, prefix=""):
        n = math.prod(shape)
        self.dwconv.cost(shape, report, prefix + "dwconv.")
        report.add(prefix + "residual", "elementwise", 0, elementwise=n * (1 + 2 * len(self.lidrs)))
        for i in range(len(self.lidrs)):
            self.attn_norms[i].cost(shape, report, f"{prefix}attn_norms.{i}.")
            self.lidrs[i].cost(shape, report, f"{prefix}lidrs.{i}.")
            self.mlp_norms[i].cost(shape, report, f"{prefix}mlp_norms.{i}.")
            self.cglus[i].cost(shape, report, f"{prefix}cglus.{i}.")
        return shape


class LightDownsample(Module):
    """Stride-2 kernel-3 conv, batch norm, squeeze-excitation."""

    def __init__(self, cin: int, cout: int, se_reduction: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv3d(cin, cout, 3, stride=2, padding=1, rng=rng)
        self.norm = BatchNorm3d(cout)
        self.se = SqueezeExcite(cout, se_reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.se(self.norm(self.conv(x)))

    def cost(self, shape, report, prefix=""):
        for name in ("conv", "norm", "se"):
            shape = getattr(self, name).cost(shape, report, f"{prefix}{name}.")
        return shape


class LightUpsample(Module):
    """Stride-2 kernel-2 transposed conv, batch norm, squeeze-excitation."""

    def __init__(self, cin: int, cout: int, se_reduction: int = 4, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = ConvTranspose3d(cin, cout, 2, stride=2, rng=rng)
        self.norm = BatchNorm3d(cout)
        self.se = SqueezeExcite(cout, se_reduction, rng)

    def forward(self, x: Tensor, target=None) -> Tensor:
        x = self.conv(x)
        if target is not None and tuple(x.shape[2:]) != tuple(target):
            # odd encoder extents: drop the trailing voxel the downsample rounded up
            x = x[:, :, :target[0], :target[1], :target[2]]
        return self.se(self.norm(x))

    def cost(self, shape, report, prefix="", target=None):
        shape = self.conv.cost(shape, report, prefix + "conv.")
        if target is not None:
            shape = (shape[0],) + tuple(target)
        shape = self.norm.cost(shape, report, prefix + "norm.")
        return self.se.cost(shape, report, prefix + "se.")
