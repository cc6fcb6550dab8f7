"""Sliding-window inference with mean-logit stitching."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from lightunetr.tensor import Tensor, no_grad
from lightunetr.tensor.ops import triple


def axis_origins(extent: int, window: int, stride: int) -> list:
    if window > extent:
        raise ValueError(f"window {window} larger than extent {extent}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return sorted({min(o, extent - window) for o in range(0, extent, stride)})


@dataclass
class WindowPlan:
    extents: Tuple[int, int, int]
    window: Tuple[int, int, int]
    stride: Tuple[int, int, int]
    origins: list

    def coverage(self) -> np.ndarray:
        counts = np.zeros(self.extents, dtype=np.int64)
        for o in self.origins:
            counts[tuple(slice(a, a + w) for a, w in zip(o, self.window))] += 1
        return counts


def plan_windows(extents, window, stride) -> WindowPlan:
    extents, window, stride = tuple(int(e) for e in extents), triple(window), triple(stride)
    for ax, n, w in zip("zyx", extents, window):
        if w > n:
            raise ValueError(f"window {window} larger than volume {extents} along {ax}")
    per_axis = [axis_origins(n, w, s) for n, w, s in zip(extents, window, stride)]
    return WindowPlan(extents, window, stride, list(itertools.product(*per_axis)))


def segment(logits: np.ndarray) -> np.ndarray:
    """(B, O, ...) logits to labels: binary uses foreground probability >= 0.5, else argmax."""
    if logits.shape[1] == 2:
        # softmax foreground prob >= 0.5  <=>  l1 >= l0
        return (logits[:, 1] >= logits[:, 0]).astype(np.int64)
    return logits.argmax(axis=1).astype(np.int64)


def sliding_window_infer(model, volume: np.ndarray, window, stride, order: Optional[Sequence[int]] = None):
    """Eval-mode logits (B, O, Z, Y, X) averaged over windows, and the segmentation.

    ``volume`` is (B, C, Z, Y, X) or (C, Z, Y, X). ``order`` permutes the
    window evaluation order; the result is order-independent up to rounding.
    """
    x = np.asarray(volume)
    squeeze = x.ndim == 4
    if squeeze:
        x = x[None]
    plan = plan_windows(x.shape[2:], window, stride)
    model.eval()
    acc: Optional[np.ndarray] = None
    origins = plan.origins if order is None else [plan.origins[i] for i in order]
    if len(plan.origins) == 1:
        with no_grad():
            logits = model(Tensor(x), with_attention=False).logits.data
    else:
        with no_grad():
            for o in origins:
                key = (slice(None), slice(None)) + tuple(slice(a, a + w) for a, w in zip(o, plan.window))
                out = model(Tensor(np.ascontiguousarray(x[key])), with_attention=False).logits.data
                if acc is None:
                    acc = np.zeros((x.shape[0], out.shape[1]) + plan.extents, dtype=np.float64)
                acc[key] += out
        logits = (acc / plan.coverage()).astype(x.dtype)
    seg = segment(logits)
    return (logits[0], seg[0]) if squeeze else (logits, seg)
