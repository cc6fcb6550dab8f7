"""Spatial masking with smooth (trilinearly upsampled) edges."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lightunetr.tensor.ops import linear_interp_matrix


@dataclass
class SmoothMask:
    coarse: np.ndarray  # binary, ceil(extent / l) per axis
    mask: np.ndarray  # values in [0, 1] at full extents

    @property
    def zero_count(self) -> int:
        return int((self.coarse == 0).sum())


def upsample(coarse: np.ndarray, extents) -> np.ndarray:
    out = np.asarray(coarse, dtype=np.float64)
    for axis, n in enumerate(extents):
        m = linear_interp_matrix(out.shape[axis], int(n))
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [axis])), 0, axis)
    return out


def generate_smooth_mask(extents, side: int, ratio: float, rng: np.random.Generator, dtype=np.float32) -> SmoothMask:
    """Zero exactly floor(ratio * n) of the n coarse cells, then upsample to ``extents``."""
    if side < 1 or not 0 <= ratio <= 1:
        raise ValueError(f"need side >= 1 and ratio in [0, 1], got {side}, {ratio}")
    shape = tuple(math.ceil(int(e) / side) for e in extents)
    n = math.prod(shape)
    coarse = np.ones(n, dtype=dtype)
    coarse[rng.choice(n, size=int(math.floor(ratio * n)), replace=False)] = 0
    coarse = coarse.reshape(shape)
    mask = np.clip(upsample(coarse, extents), 0.0, 1.0).astype(dtype)
    return SmoothMask(coarse, mask)


def apply_mask(volume: np.ndarray, mask: np.ndarray) -> np.ndarray:
    np.broadcast_shapes(volume.shape, mask.shape)
    return volume * mask
