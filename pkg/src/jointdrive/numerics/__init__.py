from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .nn import Conv2d, GRUCell, LayerNorm, Linear, Module, Param
from .optim import adam_step, steplr
from .tensor import (FullyMaskedError, NumericError, ShapeError, Tensor, debug_checks, make_op,
                     no_grad)

__all__ = [
    "Conv2d", "FullyMaskedError", "GRUCell", "GradCheckError", "GradCheckReport", "LayerNorm",
    "Linear", "Module", "NumericError", "Param", "ShapeError", "Tensor", "adam_step", "debug_checks",
    "grad_check", "make_op", "no_grad", "steplr",
]
