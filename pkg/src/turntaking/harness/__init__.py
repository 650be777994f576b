"""Training, cross-validation, baselines and the command line."""

from .config import TrainConfig, fast_config, toy_config
from .data import Encoded, FeatureStore, Preprocessor, corpus_hash, fit_preprocessor
from .metrics import Metrics, SignTest, compute_metrics, from_confusion, sign_test
from .train import TrainedModel, TrainingDiverged, build_model, train

__all__ = [
    "Encoded",
    "FeatureStore",
    "Metrics",
    "Preprocessor",
    "SignTest",
    "TrainConfig",
    "TrainedModel",
    "TrainingDiverged",
    "build_model",
    "compute_metrics",
    "corpus_hash",
    "fast_config",
    "fit_preprocessor",
    "from_confusion",
    "sign_test",
    "toy_config",
    "train",
]
