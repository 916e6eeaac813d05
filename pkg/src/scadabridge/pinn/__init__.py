from .io import SCHEMA, load_model, save_model
from .model import (Hyper, PinnModel, SequenceBatch, attention_rank, kl_divergence, layer_norm,
                    make_sequences, mse, pde_residual, sublayer, total_loss)
from .train import (ProcessAnomaly, TrainingError, anomaly_runs, calibrate, evaluate_loss, score,
                    score_series, split_batch, train, window_errors)

__all__ = [
    "SCHEMA", "Hyper", "PinnModel", "ProcessAnomaly", "SequenceBatch", "TrainingError",
    "anomaly_runs", "attention_rank", "calibrate", "evaluate_loss", "kl_divergence", "layer_norm",
    "load_model", "make_sequences", "mse", "pde_residual", "save_model", "score", "score_series",
    "split_batch", "sublayer", "total_loss", "train", "window_errors",
]
