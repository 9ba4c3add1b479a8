from . import ops
from .optim import OptimizerState, adamw_step, poly_lr
from .tensor import (
    ContractError,
    DimensionError,
    NonFiniteError,
    Tape,
    TapeAllocationError,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    grad_disabled,
    grad_enabled,
    gradients_for,
    no_grad,
    precision,
    set_checked,
    tape_counters,
)

__all__ = [
    "ContractError",
    "DimensionError",
    "NonFiniteError",
    "OptimizerState",
    "Tape",
    "TapeAllocationError",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "backward",
    "default_dtype",
    "grad_disabled",
    "grad_enabled",
    "gradients_for",
    "no_grad",
    "ops",
    "poly_lr",
    "precision",
    "set_checked",
    "tape_counters",
]
