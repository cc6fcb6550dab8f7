"""Independent brute-force oracles shared by the metric and acceptance tests."""
import math

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial.distance import cdist


def brute_surface(mask):
    """Foreground voxels with a background (or out-of-volume) 6-neighbour, by explicit loops."""
    out = np.zeros_like(mask, dtype=bool)
    for idx in zip(*np.nonzero(mask)):
        for ax in range(3):
            for d in (-1, 1):
                n = list(idx)
                n[ax] += d
                if not 0 <= n[ax] < mask.shape[ax] or not mask[tuple(n)]:
                    out[idx] = True
    return out


def brute_distances(pred, gt, spacing):
    """All-pairs O(S^2) surface distances."""
    sp = np.argwhere(brute_surface(pred)) * np.asarray(spacing)
    sg = np.argwhere(brute_surface(gt)) * np.asarray(spacing)
    d = cdist(sp, sg)
    pooled = np.concatenate([d.min(axis=1), d.min(axis=0)])
    return float(np.percentile(pooled, 95)), math.fsum(pooled) / pooled.size


def random_mask(rng, shape=(16, 16, 16)):
    # smooth blobs rather than salt noise, so surfaces look like segmentations
    field = gaussian_filter(rng.standard_normal(shape), 2.0)
    return field > np.quantile(field, rng.uniform(0.6, 0.95))
