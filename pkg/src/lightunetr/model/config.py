"""Declarative architecture description."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple


class ConfigError(ValueError):
    pass


def _tuple(v):
    return tuple(int(i) for i in v)


@dataclass(frozen=True)
class ModelConfig:
    """Light-UNETR hyperparameters.

    ``decoder_depths`` defaults to ``stage_depths`` (the decoder mirrors the
    encoder, including a bottleneck stage). ``hf_reduction`` is the factor by
    which each high-frequency branch shrinks its C/3 channels before the
    grouped convolution restores them.
    """

    in_channels: int = 1
    num_classes: int = 2
    stage_channels: Tuple[int, ...] = (24, 48, 60, 96)
    stage_depths: Tuple[int, ...] = (1, 2, 3, 2)
    decoder_depths: Optional[Tuple[int, ...]] = None
    reduction_ratios: Tuple[int, ...] = (4, 2, 2, 1)
    heads: Tuple[int, ...] = (1, 2, 4, 4)
    hf_reduction: Tuple[int, ...] = (2, 2, 2, 2)
    hf_kernels: Tuple[int, int] = (3, 5)
    pairs_per_block: int = 2
    dw_kernel: int = 3
    se_reduction: int = 4
    attention_scale: bool = True
    crop_size: Tuple[int, int, int] = (112, 112, 80)

    def __post_init__(self):
        for f in ("stage_channels", "stage_depths", "reduction_ratios", "heads", "hf_reduction",
                  "hf_kernels", "crop_size"):
            object.__setattr__(self, f, _tuple(getattr(self, f)))
        if self.decoder_depths is None:
            object.__setattr__(self, "decoder_depths", self.stage_depths)
        else:
            object.__setattr__(self, "decoder_depths", _tuple(self.decoder_depths))
        self.validate()

    @property
    def num_stages(self) -> int:
        return len(self.stage_channels)

    def validate(self) -> None:
        n = self.num_stages
        for name in ("stage_depths", "decoder_depths", "reduction_ratios", "heads", "hf_reduction"):
            if len(getattr(self, name)) != n:
                raise ConfigError(f"{name} has {len(getattr(self, name))} entries, expected {n}")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ConfigError("in_channels must be >= 1 and num_classes >= 2")
        if len(self.hf_kernels) != 2 or any(k < 1 or k % 2 == 0 for k in self.hf_kernels):
            raise ConfigError(f"hf_kernels must be two odd sizes, got {self.hf_kernels}")
        for s, (c, r, h, red) in enumerate(zip(self.stage_channels, self.reduction_ratios, self.heads,
                                               self.hf_reduction)):
            if c % 3:
                raise ConfigError(f"stage {s + 1}: channels {c} not divisible by 3 (LIDR branches)")
            c3 = c // 3
            if red < 1 or c3 % red:
                raise ConfigError(f"stage {s + 1}: branch width {c3} not divisible by hf_reduction {red}")
            if h < 1 or c3 % h:
                raise ConfigError(f"stage {s + 1}: heads {h} do not divide branch width {c3}")
            if r < 1:
                raise ConfigError(f"stage {s + 1}: reduction ratio must be >= 1, got {r}")
        if self.pairs_per_block < 1:
            raise ConfigError("pairs_per_block must be >= 1")

    # -- input extent legality ---------------------------------------------
    def stage_extents(self, extent: int) -> list:
        """Per-stage feature extent along one axis for an input of ``extent``."""
        e = -(-extent // 4)
        out = [e]
        for _ in range(self.num_stages - 1):
            e = -(-e // 2)
            out.append(e)
        return out

    def extent_problem(self, extent: int) -> Optional[str]:
        if extent % 4:
            return f"extent {extent} is not divisible by 4 (patch embedding)"
        for s, (e, r) in enumerate(zip(self.stage_extents(extent), self.reduction_ratios)):
            if e % r:
                return f"stage {s + 1} extent {e} is not divisible by reduction ratio {r}"
        return None

    def min_legal_extent(self) -> int:
        n = 4
        while self.extent_problem(n):
            n += 4
        return n

    def check_input(self, spatial) -> None:
        for ax, n in zip("zyx", spatial):
            problem = self.extent_problem(int(n))
            if problem:
                raise ConfigError(f"illegal input along {ax}: {problem}; "
                                  f"multiples of {self.min_legal_extent()} are always legal")

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def tiny_config(**overrides) -> ModelConfig:
    """Smallest useful variant, legal on 16^3 inputs; used for gradient checks."""
    base = dict(stage_channels=(3, 6, 6, 9), stage_depths=(1, 1, 1, 1), reduction_ratios=(2, 2, 1, 1),
                heads=(1, 1, 1, 1), hf_reduction=(1, 2, 2, 1), crop_size=(16, 16, 16))
    base.update(overrides)
    return ModelConfig(**base)
