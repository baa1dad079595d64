"""Minimal dense-tensor autodiff engine: layers, losses, ADAM, cyclical LR."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .ops import (
    BatchNormState,
    PackedLayout,
    add,
    add_bias,
    add_scalars,
    batch_norm,
    concat,
    dense,
    dropout,
    embedding_lookup,
    identity,
    loss_bce,
    loss_mse,
    loss_smape,
    lstm_forward,
    lstm_packed,
    matmul,
    pack,
    pack_layout,
    relu,
    reshape,
    scale,
    sigmoid,
    sigmoid_np,
    sum_squares,
)
from .optim import AdamState, CyclicalSchedule, adam_step, cyclical_lr
from .tensor import Tensor

__all__ = [
    "AdamState", "BatchNormState", "CheckpointError", "CyclicalSchedule",
    "PackedLayout", "Tensor", "adam_step", "add", "add_bias", "add_scalars",
    "batch_norm", "concat", "cyclical_lr", "dense", "dropout",
    "embedding_lookup", "identity", "load_checkpoint", "loss_bce", "loss_mse",
    "loss_smape", "lstm_forward", "lstm_packed", "matmul", "pack",
    "pack_layout", "relu", "reshape", "save_checkpoint", "scale", "sigmoid",
    "sigmoid_np", "sum_squares",
]
