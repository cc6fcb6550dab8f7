"""Overlap and surface-distance metrics for binary segmentations."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def _pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def dice_score(pred, gt) -> float:
    """Dice in percent; two empty masks agree vacuously (100)."""
    pred, gt = _pair(pred, gt)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 100.0
    return 100.0 * 2 * int(np.logical_and(pred, gt).sum()) / total


def jaccard(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 100.0
    return 100.0 * int(np.logical_and(pred, gt).sum()) / union


def surface(mask) -> np.ndarray:
    """Foreground voxels with a 6-connected background neighbour; outside the volume is background."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)


def _directed(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance from each voxel of surface ``src`` to the nearest voxel of surface ``dst``."""
    # EDT only locates the nearest dst voxel; the distance itself is evaluated explicitly
    _, nearest = ndimage.distance_transform_edt(~dst, sampling=spacing, return_indices=True)
    pts = np.argwhere(src)
    near = nearest[(slice(None),) + tuple(pts.T)].T
    diff = (pts - near) * np.asarray(spacing, dtype=np.float64)
    return np.sqrt((diff ** 2).sum(axis=1))


def surface_distance_sets(pred, gt, spacing=(1.0, 1.0, 1.0)) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    pred, gt = _pair(pred, gt)
    if not pred.any() or not gt.any():
        return None
    sp, sg = surface(pred), surface(gt)
    return _directed(sp, sg, spacing), _directed(sg, sp, spacing)


def surface_distances(pred, gt, spacing=(1.0, 1.0, 1.0)) -> Tuple[float, float]:
    """(hd95, asd) over the pooled distances of both directions; NaN if either mask is empty."""
    sets = surface_distance_sets(pred, gt, spacing)
    if sets is None:
        return math.nan, math.nan
    pooled = np.concatenate(sets)
    # fsum is correctly rounded, so the mean does not depend on direction order
    return float(np.percentile(pooled, 95)), math.fsum(pooled) / pooled.size


@dataclass
class CaseMetrics:
    case: str
    dice: float
    jaccard: float
    hd95: float
    asd: float

    @property
    def surface_defined(self) -> bool:
        return not (math.isnan(self.hd95) or math.isnan(self.asd))


def evaluate_case(case: str, pred, gt, spacing=(1.0, 1.0, 1.0)) -> CaseMetrics:
    hd95, asd = surface_distances(pred, gt, spacing)
    return CaseMetrics(case, dice_score(pred, gt), jaccard(pred, gt), hd95, asd)


@dataclass
class MetricReport:
    cases: List[CaseMetrics]

    def aggregate(self) -> dict:
        if not self.cases:
            raise ValueError("no cases to aggregate")
        defined = [c for c in self.cases if c.surface_defined]
        skipped = len(self.cases) - len(defined)
        if skipped:
            warnings.warn(f"{skipped} case(s) with an empty mask excluded from hd95/asd", RuntimeWarning)
        return {
            "dice": float(np.mean([c.dice for c in self.cases])),
            "jac": float(np.mean([c.jaccard for c in self.cases])),
            "hd95": float(np.mean([c.hd95 for c in defined])) if defined else math.nan,
            "asd": float(np.mean([c.asd for c in defined])) if defined else math.nan,
        }

    def summary(self) -> str:
        a = self.aggregate()
        return f"dice={a['dice']:.4f} jac={a['jac']:.4f} hd95={a['hd95']:.4f} asd={a['asd']:.4f}"

    def to_tsv(self) -> str:
        lines = ["case\tdice\tjac\thd95\tasd"]
        lines += [f"{c.case}\t{c.dice:.4f}\t{c.jaccard:.4f}\t{c.hd95:.4f}\t{c.asd:.4f}" for c in self.cases]
        return "\n".join(lines) + "\n"


def evaluate(cases: Sequence[Tuple[str, np.ndarray, np.ndarray]], spacing=(1.0, 1.0, 1.0)) -> MetricReport:
    return MetricReport([evaluate_case(name, p, g, spacing) for name, p, g in cases])
