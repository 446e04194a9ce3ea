"""Trainable loss-predicting monitor and its autodiff substrate."""
from .atom import (
    AtomConfig,
    AtomModel,
    ModelFormatError,
    atom_forward,
    bench_forward,
    gradient_check,
    init_model,
    load_model,
    predict_samples,
    save_model,
)
from .train import TrainHistory, TrainingDiverged, augment_batch, train

__all__ = [
    "AtomConfig", "AtomModel", "ModelFormatError", "TrainHistory", "TrainingDiverged",
    "atom_forward", "augment_batch", "bench_forward", "gradient_check", "init_model",
    "load_model", "predict_samples", "save_model", "train",
]
