"""Light-UNETR architecture."""
from lightunetr.model.config import ConfigError, ModelConfig, tiny_config
from lightunetr.model.layers import (
    CGLU,
    LIDR,
    HighFrequencyBranch,
    LightDownsample,
    LightUNETRBlock,
    LightUpsample,
    OverlapPatchEmbed,
)
from lightunetr.model.network import ForwardOutput, LightUNETR, build_model

__all__ = [
    "ConfigError", "ModelConfig", "tiny_config", "CGLU", "LIDR", "HighFrequencyBranch", "LightDownsample",
    "LightUNETRBlock", "LightUpsample", "OverlapPatchEmbed", "ForwardOutput", "LightUNETR", "build_model",
]
