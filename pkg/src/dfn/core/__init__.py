from .tensor import Tensor, NonFiniteError, no_grad
from .layers import (DenseSpec, GRUSpec, ParameterStore, dense_forward, gru_cell_step,
                     init_dense, init_gru, mlp_spec, stacked_gru_step)
from .distributions import DiagGaussian, gaussian_kl, gaussian_kl_standard, gaussian_sample
from .optim import Adam, StepConfig, optimizer_step
from .gradcheck import GradCheckReport, grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "NonFiniteError", "no_grad",
    "DenseSpec", "GRUSpec", "ParameterStore", "dense_forward", "gru_cell_step",
    "init_dense", "init_gru", "mlp_spec", "stacked_gru_step",
    "DiagGaussian", "gaussian_kl", "gaussian_kl_standard", "gaussian_sample",
    "Adam", "StepConfig", "optimizer_step",
    "GradCheckReport", "grad_check",
    "load_checkpoint", "save_checkpoint",
]
