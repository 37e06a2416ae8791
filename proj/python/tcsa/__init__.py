"""Cross-modality segmentation: losses, metrics, synthetic data and the training CLI."""

from ._tcsa import (
    DYNAMIC_PARAM_COUNT,
    ConfigError,
    Error,
    IngestError,
    InvalidSpec,
    NumericError,
    asd,
    build_prompts,
    ce_loss,
    covariance,
    dice_loss,
    dice_score,
    dynamic_conv,
    phantoms,
    run_cli,
    seg_loss,
    self_information,
    stub_embeddings,
    vlcol_loss,
)

__all__ = [
    "DYNAMIC_PARAM_COUNT",
    "ConfigError",
    "Error",
    "IngestError",
    "InvalidSpec",
    "NumericError",
    "asd",
    "build_prompts",
    "ce_loss",
    "covariance",
    "dice_loss",
    "dice_score",
    "dynamic_conv",
    "phantoms",
    "run_cli",
    "seg_loss",
    "self_information",
    "stub_embeddings",
    "vlcol_loss",
]
