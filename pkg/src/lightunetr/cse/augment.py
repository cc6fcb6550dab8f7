"""Weak (random crop) and strong (random gamma) augmentations."""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np


def random_origin(extents, crop_size, rng: np.random.Generator) -> Tuple[int, int, int]:
    extents, crop_size = tuple(extents), tuple(crop_size)
    for ax, n, c in zip("zyx", extents, crop_size):
        if c > n:
            raise ValueError(f"crop {crop_size} larger than volume {extents} along {ax}")
    return tuple(int(rng.integers(0, n - c + 1)) for n, c in zip(extents, crop_size))


def crop(array: np.ndarray, origin, crop_size) -> np.ndarray:
    """Crop the trailing three (spatial) axes."""
    sl = tuple(slice(o, o + c) for o, c in zip(origin, crop_size))
    return array[(Ellipsis,) + sl]


def weak_augment(volume: np.ndarray, label: Optional[np.ndarray], crop_size, rng: np.random.Generator):
    """Uniformly placed crop of ``volume`` (and ``label``); returns (volume, label, origin)."""
    origin = random_origin(volume.shape[-3:], crop_size, rng)
    cropped_label = crop(label, origin, crop_size) if label is not None else None
    return crop(volume, origin, crop_size), cropped_label, origin


def min_max(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    return (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)


def gamma_adjust(x: np.ndarray, gamma: float) -> np.ndarray:
    return np.power(min_max(x), gamma).astype(x.dtype, copy=False)


def strong_augment(volume: np.ndarray, rng: np.random.Generator, gamma_range=(0.7, 1.5)) -> np.ndarray:
    """Random gamma on min-max normalized intensities; spatial layout is untouched."""
    return gamma_adjust(volume, float(rng.uniform(*gamma_range)))
