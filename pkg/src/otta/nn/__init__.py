from .checkpoint import (
    CheckpointCorruptError,
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointVersionError,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)
from .layers import BNMode, NonFiniteError, TapeError
from .losses import entropy, entropy_loss, label_smoothed_ce, smoothed_targets, softmax
from .model import ArchConfig, Network
from .optim import Adam, warmup_cosine

__all__ = [
    "Adam",
    "ArchConfig",
    "BNMode",
    "CheckpointCorruptError",
    "CheckpointError",
    "CheckpointMagicError",
    "CheckpointShapeError",
    "CheckpointVersionError",
    "Network",
    "NonFiniteError",
    "TapeError",
    "entropy",
    "entropy_loss",
    "label_smoothed_ce",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
    "smoothed_targets",
    "softmax",
    "warmup_cosine",
    "write_checkpoint",
]
