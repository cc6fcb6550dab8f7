"""Dice losses and pseudo-labelling."""
from __future__ import annotations

import math

import numpy as np

from lightunetr.tensor import Tensor, ops

DICE_EPS = 1e-5


class NonFiniteLossError(FloatingPointError):
    pass


def pseudo_label(fg_prob, tau: float = 0.75) -> np.ndarray:
    """Binary pseudo label: foreground where the probability reaches ``tau`` (ties count)."""
    fg_prob = fg_prob.data if isinstance(fg_prob, Tensor) else np.asarray(fg_prob)
    return (fg_prob >= tau).astype(np.int64)


def pseudo_label_from_probs(probs: np.ndarray, tau: float = 0.75) -> np.ndarray:
    """``probs`` is (B, O, Z, Y, X). Binary tasks threshold channel 1; multi-class takes the argmax."""
    if probs.shape[1] == 2:
        return pseudo_label(probs[:, 1], tau)
    return probs.argmax(axis=1).astype(np.int64)


def one_hot(labels: np.ndarray, num_classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels).astype(np.int64)
    out = np.zeros((labels.shape[0], num_classes) + labels.shape[1:], dtype=dtype)
    np.put_along_axis(out, labels[:, None], 1, axis=1)
    return out


def soft_dice(pred: Tensor, target: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """1 - (2 sum(p t) + eps) / (sum p + sum t + eps) over all elements."""
    t = Tensor(np.asarray(target, dtype=pred.dtype))
    inter = (pred * t).sum()
    denom = pred.sum() + float(t.data.sum()) + eps
    return 1.0 - (inter * 2.0 + eps) / denom


def dice_loss(probs: Tensor, labels: np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """Dice loss of softmax probabilities (B, O, ...) against integer labels, averaged over foreground classes."""
    num_classes = probs.shape[1]
    if np.shape(labels) != (probs.shape[0],) + tuple(probs.shape[2:]):
        raise ValueError(f"labels shape {np.shape(labels)} does not match probabilities {probs.shape}")
    target = one_hot(labels, num_classes, probs.dtype)
    terms = [soft_dice(probs[:, c], target[:, c], eps) for c in range(1, num_classes)]
    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    return loss * (1.0 / len(terms)) if len(terms) > 1 else loss


def segmentation_probs(logits: Tensor) -> Tensor:
    return ops.softmax(logits, axis=1)


def total_loss(l_sup, l_ext, l_int, lambda_ext: float = 4.0, lambda_int: float = 1.0):
    """L_sup + lambda_ext * L_ext + lambda_int * L_int; works on floats and Tensors."""
    for name, v in (("L_sup", l_sup), ("L_ext", l_ext), ("L_int", l_int)):
        val = float(v.data) if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise NonFiniteLossError(f"{name} is not finite ({val})")
    return l_sup + l_ext * lambda_ext + l_int * lambda_int
