"""Light-UNETR segmentation engine with CSE semi-supervised training."""
from lightunetr.analysis import CostReport, cost_report, count_flops, count_params
from lightunetr.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from lightunetr.cse import TrainConfig, TrainData, Trainer, train_loop, train_step
from lightunetr.data import Volume, load_volume, save_volume, split_dataset, synth_generate
from lightunetr.infer import sliding_window_infer
from lightunetr.metrics import MetricReport, dice_score, evaluate, jaccard, surface_distances
from lightunetr.model import ConfigError, LightUNETR, ModelConfig, build_model, tiny_config

__version__ = "0.1.0"

__all__ = [
    "CostReport", "cost_report", "count_flops", "count_params", "CheckpointError", "load_checkpoint",
    "save_checkpoint", "TrainConfig", "TrainData", "Trainer", "train_loop", "train_step", "Volume", "load_volume",
    "save_volume", "split_dataset", "synth_generate", "sliding_window_infer", "MetricReport", "dice_score",
    "evaluate", "jaccard", "surface_distances", "ConfigError", "LightUNETR", "ModelConfig", "build_model",
    "tiny_config",
]
