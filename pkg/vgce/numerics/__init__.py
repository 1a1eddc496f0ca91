"""
Dense differentiable layer: gradient tape, ops, Adam and a gradient checker.
"""

from vgce.numerics.autodiff import DiffNode, backward, constant, parameter, zero_grad
from vgce.numerics.gradcheck import GradientCheckReport, finite_difference_check
from vgce.numerics.optim import AdamState, adam_step

__all__ = [
    "DiffNode",
    "backward",
    "constant",
    "parameter",
    "zero_grad",
    "GradientCheckReport",
    "finite_difference_check",
    "AdamState",
    "adam_step",
]
