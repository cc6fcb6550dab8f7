"""Contextual Synergic Enhancement: semi-supervised training with AGR and SMC."""
from lightunetr.cse.agr import (
    Region,
    RegionGrid,
    agr_mix,
    attention_region_probs,
    patch_size,
    region_starts,
    sample_index,
    sample_region,
)
from lightunetr.cse.augment import gamma_adjust, strong_augment, weak_augment
from lightunetr.cse.config import REGION_MODES, TrainConfig, TrainConfigError
from lightunetr.cse.losses import (
    DICE_EPS,
    NonFiniteLossError,
    dice_loss,
    one_hot,
    pseudo_label,
    pseudo_label_from_probs,
    segmentation_probs,
    soft_dice,
    total_loss,
)
from lightunetr.cse.smc import SmoothMask, apply_mask, generate_smooth_mask
from lightunetr.cse.train import (
    STREAMS,
    StepResult,
    TrainData,
    Trainer,
    load_train_data,
    make_streams,
    train_loop,
    train_step,
)

__all__ = [
    "Region", "RegionGrid", "agr_mix", "attention_region_probs", "patch_size", "region_starts", "sample_index",
    "sample_region", "gamma_adjust", "strong_augment", "weak_augment", "REGION_MODES", "TrainConfig",
    "TrainConfigError", "DICE_EPS", "NonFiniteLossError", "dice_loss", "one_hot", "pseudo_label",
    "pseudo_label_from_probs", "segmentation_probs", "soft_dice", "total_loss", "SmoothMask", "apply_mask",
    "generate_smooth_mask", "STREAMS", "StepResult", "TrainData", "Trainer", "load_train_data", "make_streams",
    "train_loop", "train_step",
]
