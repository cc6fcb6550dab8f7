"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from lightunetr.tensor.core import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), with a tiny floor so all-zero pairs give 0."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(fn: Callable[[], Tensor], target: Tensor, eps: float = 1e-4,
                 indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``target``.

    If ``indices`` is given only those entries are probed and a 1-D array is
    returned in the same order.
    """
    flat_idx = list(indices) if indices is not None else list(np.ndindex(target.shape))
    out = np.zeros(len(flat_idx), dtype=np.float64)
    for i, idx in enumerate(flat_idx):
        orig = target.data[idx].copy()
        target.data[idx] = orig + eps
        fp = float(fn().data)
        target.data[idx] = orig - eps
        fm = float(fn().data)
        target.data[idx] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out if indices is not None else out.reshape(target.shape)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4) -> list:
    """Return the relative error of every input's backprop gradient vs. finite differences."""
    for t in inputs:
        t.grad = None
    fn().backward()
    errors = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors.append(relative_error(analytic, numeric_grad(fn, t, eps)))
    return errors
