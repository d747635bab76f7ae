"""Small float64 recurrent-network toolkit: LSTM, dense layers, Adam, losses, BPTT."""
from .gradcheck import grad_check
from .layers import dropout_apply, lstm_cell, lstm_forward
from .losses import CompositeLoss, Head, mean_step_displacement, temporal_smoothness
from .network import Architecture, SequenceNet, load_checkpoint, save_checkpoint
from .optim import Adam, adam_step
from .train import TrainConfig, fit_sequences, predict_sequences

__all__ = [
    "Adam", "Architecture", "CompositeLoss", "Head", "SequenceNet", "TrainConfig",
    "adam_step", "dropout_apply", "fit_sequences", "grad_check", "load_checkpoint",
    "lstm_cell", "lstm_forward", "mean_step_displacement", "predict_sequences",
    "save_checkpoint", "temporal_smoothness",
]
