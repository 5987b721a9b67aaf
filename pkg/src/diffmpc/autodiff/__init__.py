"""Scalar reverse-mode automatic differentiation."""
from .gradcheck import GradCheckReport, central_difference, grad_check, relative_error
from .ops import (cos, cosh, exp, hinge, log, maximum, power, sin, sinh,
                  smooth_abs, sqrt, square, vsum)
from .tape import (BACKENDS, DEFAULT_BACKEND, Gradient, Tape, Var, backward,
                   lift, use_backend, value_and_grad, value_of)

__all__ = [
    "BACKENDS", "DEFAULT_BACKEND", "GradCheckReport", "Gradient", "Tape", "Var",
    "backward", "central_difference", "cos", "cosh", "exp", "grad_check",
    "hinge", "lift", "log", "maximum", "power", "relative_error", "sin", "sinh",
    "smooth_abs", "sqrt", "square", "use_backend", "value_and_grad", "value_of", "vsum",
]
