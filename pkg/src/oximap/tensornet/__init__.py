"""Minimal reverse-mode autodiff engine on numpy arrays.

Provides exactly the surface the SpO2 models need: tensors with recorded
backward closures, conv/batch-norm/linear layers, the two losses, Adam,
finite-difference gradient checking, and flat-blob parameter serialization.
"""

from .gradcheck import GradReport, grad_check
from .ops import (
    BatchNormState,
    MmtmParams,
    batchnorm,
    concat,
    conv2d,
    depthwise_conv,
    gap,
    linear,
    mmtm_fuse,
    mmtm_joint_dim,
    mse_loss,
    negcorr_loss,
    relu,
    sigmoid,
)
from .optim import Adam
from .serialize import load_params, save_params
from .tensor import Tensor, no_grad, set_nan_check

__all__ = [
    "Tensor",
    "no_grad",
    "set_nan_check",
    "conv2d",
    "depthwise_conv",
    "BatchNormState",
    "batchnorm",
    "relu",
    "sigmoid",
    "linear",
    "gap",
    "concat",
    "MmtmParams",
    "mmtm_joint_dim",
    "mmtm_fuse",
    "mse_loss",
    "negcorr_loss",
    "Adam",
    "GradReport",
    "grad_check",
    "save_params",
    "load_params",
]
