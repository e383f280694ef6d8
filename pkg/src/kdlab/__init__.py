"""Desk-scale text-classification training lab.

A numpy library implementing a miniature transformer text classifier and the
training method stack around it: single-task fine-tuning, knowledge
distillation, multi-task learning, multi-teacher distillation with teacher
annealing, and four text data-augmentation families. Everything runs on a
float64 reverse-mode autodiff core so every loss and schedule is checkable
against analytic and finite-difference oracles.
"""

from .rng import SeededRng
from .tensor import Tensor, backward, gradients, parameter
from .gradcheck import check_gradients
from .optim import AdamWState, adamw_step

__version__ = "0.1.0"

__all__ = [
    "SeededRng",
    "Tensor",
    "backward",
    "gradients",
    "parameter",
    "check_gradients",
    "AdamWState",
    "adamw_step",
    "__version__",
]
