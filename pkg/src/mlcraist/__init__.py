"""Wavelet-domain cross-attention super-resolution (ML-CrAIST) with a
self-contained numpy reverse-mode tensor engine."""

from .engine import (InvalidArgumentError, Module, Param, Tape, Tensor,
                     grad_check, set_debug_checks, tensor)
from .model import MlCraist, ModelConfig, param_count, tail_param_delta
from .training import TrainConfig, l1_loss, train
from .wavelet import SubBandSet, dwt2_haar, dwt2_multilevel, idwt2_haar

__version__ = "0.1.0"

__all__ = [
    "InvalidArgumentError", "Module", "Param", "Tape", "Tensor",
    "grad_check", "set_debug_checks", "tensor",
    "MlCraist", "ModelConfig", "param_count", "tail_param_delta",
    "TrainConfig", "l1_loss", "train",
    "SubBandSet", "dwt2_haar", "dwt2_multilevel", "idwt2_haar",
    "__version__",
]
