"""Joint-fusion residual 3D CNN for six-month survival classification.

Consumes the image/segmentation arrays and cohort table written by the
radiomics pipeline's export step; has no other coupling to it.
"""
from .augment import AugmentConfig, augment
from .data import Sample, collate, encode_clinical, load_samples, upsample_minority
from .model import ConvBlock, FusionNet, FusionNetConfig, ResBlock, build_model
from .train import (
    EnsembleResult,
    SplitResult,
    TrainConfig,
    ensemble_probabilities,
    predict_proba,
    rank_auc,
    train_and_ensemble,
    train_split,
)

__all__ = [
    "AugmentConfig",
    "augment",
    "Sample",
    "collate",
    "encode_clinical",
    "load_samples",
    "upsample_minority",
    "ConvBlock",
    "FusionNet",
    "FusionNetConfig",
    "ResBlock",
    "build_model",
    "EnsembleResult",
    "SplitResult",
    "TrainConfig",
    "ensemble_probabilities",
    "predict_proba",
    "rank_auc",
    "train_and_ensemble",
    "train_split",
]
