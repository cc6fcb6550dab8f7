"""Training hyperparameters."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Tuple

REGION_MODES = ("mean", "sum", "linear")


class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """CSE hyperparameters and the optimisation schedule.

    ``region_mode`` selects how region attention becomes probabilities:
    ``mean`` (softmax of per-region mean attention, the default), ``sum``
    (softmax of raw sums) or ``linear`` (sums divided by their total).
    """

    alpha: float = 0.65
    mask_side: int = 16
    mask_ratio: float = 0.5
    tau: float = 0.75
    lambda_ext: float = 4.0
    lambda_int: float = 1.0
    region_mode: str = "mean"
    gamma_range: Tuple[float, float] = (0.7, 1.5)
    iterations: int = 15000
    warmup: int = 500
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 4
    labeled_per_batch: int = 2
    crop_size: Tuple[int, int, int] = (112, 112, 80)
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "gamma_range", tuple(float(g) for g in self.gamma_range))
        object.__setattr__(self, "crop_size", tuple(int(c) for c in self.crop_size))
        self.validate()

    @property
    def unlabeled_per_batch(self) -> int:
        return self.batch_size - self.labeled_per_batch

    @property
    def semi_supervised(self) -> bool:
        return self.lambda_ext != 0 or self.lambda_int != 0

    def validate(self) -> None:
        if not 0 < self.alpha <= 1:
            raise TrainConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0 <= self.mask_ratio <= 1:
            raise TrainConfigError(f"mask_ratio must be in [0, 1], got {self.mask_ratio}")
        if self.mask_side < 1:
            raise TrainConfigError(f"mask_side must be >= 1, got {self.mask_side}")
        if not 0.5 <= self.tau < 1:
            raise TrainConfigError(f"tau must be in [0.5, 1), got {self.tau}")
        if self.lambda_ext < 0 or self.lambda_int < 0:
            raise TrainConfigError("loss weights must be nonnegative")
        if self.region_mode not in REGION_MODES:
            raise TrainConfigError(f"region_mode must be one of {REGION_MODES}, got {self.region_mode!r}")
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            raise TrainConfigError(f"bad gamma_range {self.gamma_range}")
        if self.iterations < 1 or not 0 <= self.warmup <= self.iterations:
            raise TrainConfigError("need iterations >= 1 and 0 <= warmup <= iterations")
        if not 1 <= self.labeled_per_batch <= self.batch_size:
            raise TrainConfigError("labeled_per_batch must be in [1, batch_size]")
        if self.semi_supervised and self.unlabeled_per_batch < 1:
            raise TrainConfigError("semi-supervised training needs unlabeled samples in each batch")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise TrainConfigError("lr, momentum and weight_decay must be nonnegative")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise TrainConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "TrainConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))
