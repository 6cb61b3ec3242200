"""Model-recovery core: term library, sparse fits, ODE loss and training."""

from .library import CoeffVector, TermLibrary, build_library, eval_library, library_system
from .odeloss import adjoint_grad_check, ode_loss, ode_loss_grad
from .sindy import SingularSystemError, sindy_fit
from .train import (
    DenseHead,
    TrainConfig,
    TrainResult,
    TrainingDiverged,
    build_windows,
    init_head,
    merinda_forward,
    train_merinda,
)

__all__ = [
    "TermLibrary",
    "CoeffVector",
    "build_library",
    "eval_library",
    "library_system",
    "sindy_fit",
    "SingularSystemError",
    "ode_loss",
    "ode_loss_grad",
    "adjoint_grad_check",
    "DenseHead",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "build_windows",
    "init_head",
    "merinda_forward",
    "train_merinda",
]
