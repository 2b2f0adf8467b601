"""Training, evaluation, ablation sweeps, gradient-check suites and the command line."""
from .config import DataConfig, LossConfig, OptimConfig, RunConfig
from .evaluate import ModalityMismatch, evaluate, metric_table, predict_samples
from .train import TrainingDiverged, TrainResult, flip_sample, load_model, save_model, train

__all__ = [
    "DataConfig", "LossConfig", "ModalityMismatch", "OptimConfig", "RunConfig", "TrainResult",
    "TrainingDiverged", "evaluate", "flip_sample", "load_model", "metric_table", "predict_samples",
    "save_model", "train",
]
