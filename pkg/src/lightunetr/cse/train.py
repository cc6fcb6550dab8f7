"""Shared-weight CSE training: one network sees labeled, mixed and masked views."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, TextIO

import numpy as np

from lightunetr.cse.agr import agr_mix, attention_region_probs, sample_region
from lightunetr.cse.augment import strong_augment, weak_augment
from lightunetr.cse.config import TrainConfig
from lightunetr.cse.losses import (
    NonFiniteLossError,
    dice_loss,
    pseudo_label_from_probs,
    segmentation_probs,
    total_loss,
)
from lightunetr.cse.smc import apply_mask, generate_smooth_mask
from lightunetr.nn import frozen_running_stats
from lightunetr.tensor import SGD, Tensor, cosine_lr, get_default_dtype, no_grad

# one independent generator per consumer, so switching a loss term off never
# shifts the draws seen by the others
STREAMS = ("labeled", "labeled_crop", "unlabeled", "unlabeled_crop", "strong", "agr", "smc")


def make_streams(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


@dataclass
class TrainData:
    images: List[np.ndarray]  # labeled, each (C, Z, Y, X)
    labels: List[np.ndarray]  # each (Z, Y, X), integer classes
    unlabeled: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if len(self.images) != len(self.labels) or not self.images:
            raise ValueError("need at least one labeled image and one label per image")


@dataclass
class StepResult:
    iteration: int
    lr: float
    l_sup: float
    l_ext: float
    l_int: float
    total: float

    def log_line(self) -> str:
        return (f"iter={self.iteration} lr={self.lr:.8g} L_sup={self.l_sup:.6f} "
                f"L_ext={self.l_ext:.6f} L_int={self.l_int:.6f} total={self.total:.6f}")


def _pick(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.choice(n, size=k, replace=n < k)


def _batch(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(arrays).astype(get_default_dtype(), copy=False)


def _as_float(v) -> float:
    return float(v.data) if isinstance(v, Tensor) else float(v)


def segment_loss(model, images: np.ndarray, labels: np.ndarray) -> Tensor:
    logits = model(Tensor(images), with_attention=False).logits
    return dice_loss(segmentation_probs(logits), labels)


def labeled_batch(data: TrainData, cfg: TrainConfig, streams):
    idx = _pick(streams["labeled"], len(data.images), cfg.labeled_per_batch)
    xs, ys = [], []
    for i in idx:
        x, y, _ = weak_augment(data.images[i], data.labels[i], cfg.crop_size, streams["labeled_crop"])
        xs.append(x)
        ys.append(y)
    return _batch(xs), np.stack(ys).astype(np.int64)


def unlabeled_batch(data: TrainData, cfg: TrainConfig, streams) -> np.ndarray:
    idx = _pick(streams["unlabeled"], len(data.unlabeled), cfg.unlabeled_per_batch)
    return _batch([weak_augment(data.unlabeled[i], None, cfg.crop_size, streams["unlabeled_crop"])[0]
                   for i in idx])


def perturbed_views(model, x_l, y_l, x_u, cfg: TrainConfig, streams):
    """Pseudo labels from the weak view, the AGR-mixed pair and the masked strong view."""
    with no_grad():
        out = model(Tensor(x_u))
        probs = segmentation_probs(out.logits).data
    y_u = pseudo_label_from_probs(probs, cfg.tau)
    attention = out.attention_map.data[:, 0]
    mixed_x, mixed_y, masked = [], [], []
    for i in range(x_u.shape[0]):
        j = i % x_l.shape[0]
        grid = attention_region_probs(attention[i], cfg.alpha, cfg.region_mode)
        region = sample_region(grid, streams["agr"])
        mx, my = agr_mix(x_u[i], y_u[i], x_l[j], y_l[j], region)
        mixed_x.append(mx)
        mixed_y.append(my)
        strong = strong_augment(x_u[i], streams["strong"], cfg.gamma_range)
        mask = generate_smooth_mask(x_u.shape[-3:], cfg.mask_side, cfg.mask_ratio, streams["smc"],
                                    dtype=x_u.dtype)
        masked.append(apply_mask(strong, mask.mask))
    return y_u, _batch(mixed_x), np.stack(mixed_y), _batch(masked)


def train_step(model, optimizer: SGD, data: TrainData, cfg: TrainConfig, streams, lr: float,
               iteration: int = 0) -> StepResult:
    """One optimisation step; with both loss weights at zero this is plain supervised training."""
    model.train()
    x_l, y_l = labeled_batch(data, cfg, streams)
    l_ext = l_int = 0.0
    views = None
    if cfg.semi_supervised:
        views = perturbed_views(model, x_l, y_l, unlabeled_batch(data, cfg, streams), cfg, streams)
    optimizer.zero_grad()
    l_sup = segment_loss(model, x_l, y_l)
    if views is not None:
        y_u, x_mix, y_mix, x_masked = views
        # perturbed views are a training-only distribution; keep them out of the eval-time BN statistics
        with frozen_running_stats():
            if cfg.lambda_ext:
                l_ext = segment_loss(model, x_mix, y_mix)
            if cfg.lambda_int:
                l_int = segment_loss(model, x_masked, y_u)
    try:
        loss = total_loss(l_sup, l_ext, l_int, cfg.lambda_ext, cfg.lambda_int)
    except NonFiniteLossError as e:
        raise NonFiniteLossError(f"iteration {iteration}: {e} (L_sup={_as_float(l_sup)}, "
                                 f"L_ext={_as_float(l_ext)}, L_int={_as_float(l_int)}, lr={lr})") from None
    loss.backward()
    optimizer.step(lr)
    return StepResult(iteration, lr, _as_float(l_sup), _as_float(l_ext), _as_float(l_int), _as_float(loss))


class Trainer:
    """Runs ``train_step`` under the warmup + cosine schedule, logging and checkpointing."""

    def __init__(self, model, data: TrainData, cfg: TrainConfig):
        self.model, self.data, self.cfg = model, data, cfg
        self.optimizer = SGD(model.parameters(), cfg.momentum, cfg.weight_decay)
        self.streams = make_streams(cfg.seed)
        self.iteration = 0
        self.trace: List[StepResult] = []

    def lr_at(self, t: int) -> float:
        return cosine_lr(t, self.cfg.iterations, self.cfg.warmup, self.cfg.lr)

    def step(self) -> StepResult:
        t = self.iteration + 1
        result = train_step(self.model, self.optimizer, self.data, self.cfg, self.streams, self.lr_at(t), t)
        self.iteration = t
        self.trace.append(result)
        return result

    def rng_states(self) -> dict:
        return {name: rng.bit_generator.state for name, rng in self.streams.items()}

    def save(self, prefix: str) -> None:
        from lightunetr.checkpoint import save_checkpoint

        save_checkpoint(prefix, self.model, self.iteration, self.optimizer, self.rng_states(),
                        extra={"train_config": self.cfg.to_dict()})

    def resume(self, prefix: str) -> None:
        from lightunetr.checkpoint import load_weights

        manifest = load_weights(prefix, self.model, self.optimizer)
        for name, state in manifest["rng_states"].items():
            self.streams[name].bit_generator.state = state
        self.iteration = int(manifest["iteration"])

    def run(self, until: Optional[int] = None, log: Optional[TextIO] = None, checkpoint_dir: Optional[str] = None,
            callback: Optional[Callable[["Trainer", StepResult], None]] = None) -> List[StepResult]:
        until = self.cfg.iterations if until is None else until
        every = self.cfg.checkpoint_every
        while self.iteration < until:
            result = self.step()
            if log is not None and self.cfg.log_every and result.iteration % self.cfg.log_every == 0:
                log.write(result.log_line() + "\n")
            if checkpoint_dir and every and result.iteration % every == 0:
                self.save(os.path.join(checkpoint_dir, f"iter{result.iteration:06d}"))
            if callback is not None:
                callback(self, result)
        if checkpoint_dir:
            self.save(os.path.join(checkpoint_dir, "final"))
        return self.trace


def train_loop(model, data: TrainData, cfg: TrainConfig, log: Optional[TextIO] = None,
               checkpoint_dir: Optional[str] = None) -> Trainer:
    trainer = Trainer(model, data, cfg)
    trainer.run(log=log, checkpoint_dir=checkpoint_dir)
    return trainer


def load_train_data(root: str, labeled_ids: Sequence[str], unlabeled_ids: Sequence[str]) -> TrainData:
    from lightunetr.data import load_case

    images, labels = [], []
    for sid in labeled_ids:
        img, lbl = load_case(root, sid)
        images.append(img.data)
        labels.append(np.rint(lbl.data[0]).astype(np.int64))
    unlabeled = [load_case(root, sid)[0].data for sid in unlabeled_ids]
    return TrainData(images, labels, unlabeled)
