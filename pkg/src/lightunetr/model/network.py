"""Light-UNETR encoder-decoder."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lightunetr.model.config import ModelConfig
from lightunetr.model.layers import LightDownsample, LightUNETRBlock, LightUpsample, OverlapPatchEmbed
from lightunetr.nn import Conv3d, Module, ModuleList
from lightunetr.tensor import Tensor, no_grad, ops


@dataclass
class ForwardOutput:
    logits: Tensor
    attention_map: Optional[Tensor] = None


class LightUNETR(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        cfg = config
        ch = cfg.stage_channels

        def make_stage(s, depth):
            return ModuleList(
                LightUNETRBlock(ch[s], cfg.reduction_ratios[s], cfg.heads[s], cfg.hf_reduction[s],
                                cfg.hf_kernels, cfg.pairs_per_block, cfg.dw_kernel, cfg.attention_scale, rng)
                for _ in range(depth))

        self.patch_embed = OverlapPatchEmbed(cfg.in_channels, ch[0], rng)
        self.encoder = ModuleList()
        self.downsample = ModuleList()
        for s in range(cfg.num_stages):
            self.encoder.append(make_stage(s, cfg.stage_depths[s]))
            if s < cfg.num_stages - 1:
                self.downsample.append(LightDownsample(ch[s], ch[s + 1], cfg.se_reduction, rng))
        # decoder stages listed deepest first; the deepest has no upsample/skip
        self.decoder = ModuleList()
        self.upsample = ModuleList()
        self.fuse = ModuleList()
        for s in reversed(range(cfg.num_stages)):
            if s < cfg.num_stages - 1:
                self.upsample.append(LightUpsample(ch[s + 1], ch[s], cfg.se_reduction, rng))
                self.fuse.append(Conv3d(2 * ch[s], ch[s], 1, rng=rng))
            self.decoder.append(make_stage(s, cfg.decoder_depths[s]))
        self.head = Conv3d(ch[0], cfg.num_classes, 1, rng=rng)
        # plain attribute: the LIDR is already registered inside the decoder
        object.__setattr__(self, "_attention_source", self._last_decoder_lidr())
        if self._attention_source is not None:
            self._attention_source.keep_attention = True

    def _last_decoder_lidr(self):
        for stage in reversed(list(self.decoder)):
            if len(stage):
                return stage[len(stage) - 1].lidrs[len(stage[len(stage) - 1].lidrs) - 1]
        return None

    def forward(self, x: Tensor, with_attention: bool = True) -> ForwardOutput:
        if x.ndim != 5 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected input (B, {self.config.in_channels}, Z, Y, X), got {x.shape}")
        spatial = tuple(x.shape[2:])
        self.config.check_input(spatial)
        n = self.config.num_stages
        h = self.patch_embed(x)
        skips = []
        for s in range(n):
            for block in self.encoder[s]:
                h = block(h)
            if s < n - 1:
                skips.append(h)
                h = self.downsample[s](h)
        for i, stage in enumerate(self.decoder):
            s = n - 1 - i
            if s < n - 1:
                skip = skips[s]
                h = self.upsample[i - 1](h, target=skip.shape[2:])
                h = self.fuse[i - 1](ops.concat([skip, h], axis=1))
            for block in stage:
                h = block(h)
        h = ops.trilinear_resize(h, spatial)
        logits = self.head(h)
        attention = self.attention_map(spatial) if with_attention else None
        return ForwardOutput(logits, attention)

    def attention_map(self, spatial) -> Optional[Tensor]:
        """Per-key attention received in the last decoder LIDR, averaged over heads and queries."""
        src = self._attention_source
        if src is None or src.last_attention is None:
            return None
        attn = src.last_attention  # (B, heads, T, T)
        b = attn.shape[0]
        received = attn.mean(axis=(1, 2))
        grid = src.last_grid
        with no_grad():
            coarse = Tensor(received.reshape((b, 1) + grid))
            return ops.trilinear_resize(coarse, spatial)

    def coarse_attention(self) -> Optional[np.ndarray]:
        src = self._attention_source
        if src is None or src.last_attention is None:
            return None
        return src.last_attention.mean(axis=(1, 2))

    def cost(self, shape, report, prefix=""):
        cfg = self.config
        n = cfg.num_stages
        spatial = tuple(shape[1:])
        h = self.patch_embed.cost(shape, report, "patch_embed.")
        skips = []
        for s in range(n):
            for j, block in enumerate(self.encoder[s]):
                h = block.cost(h, report, f"encoder.{s}.{j}.")
            if s < n - 1:
                skips.append(h)
                h = self.downsample[s].cost(h, report, f"downsample.{s}.")
        for i, stage in enumerate(self.decoder):
            s = n - 1 - i
            if s < n - 1:
                skip = skips[s]
                h = self.upsample[i - 1].cost(h, report, f"upsample.{i - 1}.", target=skip[1:])
                h = self.fuse[i - 1].cost((2 * h[0],) + tuple(h[1:]), report, f"fuse.{i - 1}.")
            for j, block in enumerate(stage):
                h = block.cost(h, report, f"decoder.{i}.{j}.")
        h = (h[0],) + spatial
        report.add("head.resize", "resize", 0, elementwise=math.prod(h))
        return self.head.cost(h, report, "head.")


def build_model(config: Optional[ModelConfig] = None, seed: int = 0) -> LightUNETR:
    """Deterministically initialise a Light-UNETR from ``config`` and ``seed``."""
    return LightUNETR(config or ModelConfig(), np.random.default_rng(seed))
