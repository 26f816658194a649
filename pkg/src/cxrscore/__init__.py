"""Severity score regression for chest-radiograph-like images.

A from-scratch vision-transformer regressor predicting per-lung infection
severity, with score-aware augmentations (lung half replacement, cutmix,
mixup, flip), a deterministic training loop, metric reports, a synthetic
data generator with analytically known labels, and a CLI pipeline.
"""

__version__ = "0.1.0"

from .augment import (
    CutMixParams,
    expand_dataset,
    hflip,
    lung_score_replace,
    score_cutmix,
    score_mixup,
)
from .data import (
    CxrSample,
    PreprocessConfig,
    load_image,
    load_manifest,
    preprocess,
    preprocess_batch,
    save_dataset,
    save_image,
    save_manifest,
    split_train_val,
)
from .errors import (
    ArgumentError,
    AugmentationError,
    CheckpointError,
    CliUsageError,
    ConfigurationError,
    CxrScoreError,
    IngestError,
    ShapeError,
    TrainingError,
    UndefinedCorrelationError,
)
from .evaluation import (
    EvalReport,
    PredictionRow,
    cmc,
    error_histogram,
    evaluate,
    mae,
    pearson,
    write_predictions_csv,
    write_report_json,
)
from .model import (
    AttentionMap,
    ScorePrediction,
    VitConfig,
    VitRegressor,
    extract_attention,
    init_weights,
    load_weights,
    predict,
    read_checkpoint_config,
    save_checkpoint,
    upsample_map,
)
from .synth import OPACITY_THRESHOLD, directed_sample, score_from_coverage, synth_dataset
from .training import (
    TrainConfig,
    TrainResult,
    TrainTrace,
    huber_loss,
    l1_loss,
    mse_loss,
    smooth_l1_loss,
    train,
)

__all__ = [
    "ArgumentError",
    "AttentionMap",
    "AugmentationError",
    "CheckpointError",
    "CliUsageError",
    "ConfigurationError",
    "CutMixParams",
    "CxrSample",
    "CxrScoreError",
    "EvalReport",
    "IngestError",
    "OPACITY_THRESHOLD",
    "PredictionRow",
    "PreprocessConfig",
    "ScorePrediction",
    "ShapeError",
    "TrainConfig",
    "TrainResult",
    "TrainTrace",
    "TrainingError",
    "UndefinedCorrelationError",
    "VitConfig",
    "VitRegressor",
    "cmc",
    "directed_sample",
    "error_histogram",
    "evaluate",
    "expand_dataset",
    "extract_attention",
    "hflip",
    "huber_loss",
    "init_weights",
    "l1_loss",
    "load_image",
    "load_manifest",
    "load_weights",
    "lung_score_replace",
    "mae",
    "mse_loss",
    "pearson",
    "predict",
    "preprocess",
    "preprocess_batch",
    "read_checkpoint_config",
    "save_checkpoint",
    "save_dataset",
    "save_image",
    "save_manifest",
    "score_cutmix",
    "score_from_coverage",
    "score_mixup",
    "smooth_l1_loss",
    "split_train_val",
    "synth_dataset",
    "train",
    "upsample_map",
    "write_predictions_csv",
    "write_report_json",
]
