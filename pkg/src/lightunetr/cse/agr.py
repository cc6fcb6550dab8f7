"""Attention-guided replacement: pick a region by attention and paste labeled content into it."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import softmax

from lightunetr.cse.config import REGION_MODES


@dataclass
class RegionGrid:
    """Cubic regions of side ``patch`` tiling a volume, with sampling probabilities.

    ``starts`` holds per-axis start coordinates; the last start on each axis is
    clamped so the region fits, and may overlap its neighbour.
    """

    patch: int
    starts: Tuple[List[int], List[int], List[int]]
    sums: np.ndarray  # raw attention per region, shape (Nz, Ny, Nx)
    probs: np.ndarray  # same shape, sums to 1

    @property
    def counts(self) -> Tuple[int, int, int]:
        return tuple(len(s) for s in self.starts)

    def region(self, index) -> "Region":
        start = tuple(s[i] for s, i in zip(self.starts, index))
        return Region(start, (self.patch,) * 3)


@dataclass(frozen=True)
class Region:
    start: Tuple[int, int, int]
    size: Tuple[int, int, int]

    @property
    def slices(self) -> tuple:
        return tuple(slice(s, s + n) for s, n in zip(self.start, self.size))


def region_starts(extent: int, patch: int) -> List[int]:
    return [min(i * patch, extent - patch) for i in range(math.ceil(extent / patch))]


def patch_size(extents, alpha: float) -> int:
    return int(math.floor(min(extents) * alpha))


def attention_region_probs(attention: np.ndarray, alpha: float, mode: str = "mean") -> RegionGrid:
    """Region probabilities from a nonnegative full-resolution attention map (Z, Y, X)."""
    a = np.asarray(attention, dtype=np.float64)
    a = a.reshape(a.shape[-3:]) if a.ndim > 3 else a
    if mode not in REGION_MODES:
        raise ValueError(f"unknown region mode {mode!r}")
    p = patch_size(a.shape, alpha)
    if p < 1:
        raise ValueError(f"patch side {p} < 1 for extents {a.shape} and alpha {alpha}")
    starts = tuple(region_starts(n, p) for n in a.shape)
    # summed-area table gives every box sum in O(1)
    sat = np.zeros(tuple(n + 1 for n in a.shape))
    sat[1:, 1:, 1:] = a.cumsum(0).cumsum(1).cumsum(2)
    z0 = np.asarray(starts[0])[:, None, None]
    y0 = np.asarray(starts[1])[None, :, None]
    x0 = np.asarray(starts[2])[None, None, :]
    z1, y1, x1 = z0 + p, y0 + p, x0 + p
    sums = (sat[z1, y1, x1] - sat[z0, y1, x1] - sat[z1, y0, x1] - sat[z1, y1, x0]
            + sat[z0, y0, x1] + sat[z0, y1, x0] + sat[z1, y0, x0] - sat[z0, y0, x0])
    if mode == "mean":
        probs = softmax(sums / p ** 3)
    elif mode == "sum":
        probs = softmax(sums)
    else:
        total = sums.sum()
        probs = sums / total if total > 0 else np.full(sums.shape, 1.0 / sums.size)
    return RegionGrid(p, starts, sums, probs)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> Tuple[int, ...]:
    """Categorical draw by inverse CDF on a single uniform variate."""
    flat = probs.ravel()
    cdf = np.cumsum(flat)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    k = min(k, flat.size - 1)
    while flat[k] == 0 and k > 0:  # guard against landing on a zero-mass tail after rounding
        k -= 1
    return tuple(int(i) for i in np.unravel_index(k, probs.shape))


def sample_region(grid: RegionGrid, rng: np.random.Generator) -> Region:
    return grid.region(sample_index(grid.probs, rng))


def agr_mix(image_u: np.ndarray, label_u: np.ndarray, image_l: np.ndarray, label_l: np.ndarray,
            region: Region) -> Tuple[np.ndarray, np.ndarray]:
    """Copy ``region`` of the labeled pair into copies of the unlabeled pair."""
    spatial = image_u.shape[-3:]
    for name, arr in (("label_u", label_u), ("image_l", image_l), ("label_l", label_l)):
        if arr.shape[-3:] != spatial:
            raise ValueError(f"{name} spatial shape {arr.shape[-3:]} != {spatial}")
    if image_u.shape != image_l.shape or label_u.shape != label_l.shape:
        raise ValueError("image/label shapes of the two sources differ")
    if any(s < 0 or s + n > e for s, n, e in zip(region.start, region.size, spatial)):
        raise ValueError(f"region {region} outside volume {spatial}")
    key = (Ellipsis,) + region.slices
    image, label = image_u.copy(), label_u.copy()
    image[key] = image_l[key]
    label[key] = label_l[key]
    return image, label
