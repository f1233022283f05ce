"""TSRNet: tree-guided super-resolution on a small numpy autodiff engine."""
from .autograd import NonFiniteError, Tape, Tensor, backward, grad_check
from .model import TsrNetConfig, build, count_flops, count_params, forward

__version__ = "0.1.0"

__all__ = [
    "NonFiniteError",
    "Tape",
    "Tensor",
    "TsrNetConfig",
    "backward",
    "build",
    "count_flops",
    "count_params",
    "forward",
    "grad_check",
]
