"""Finite-difference verification of reverse-mode gradients.

Central differences with step h give an independent estimate of each
coordinate's partial derivative; a composed graph whose analytic gradient
disagrees beyond tolerance is broken. The comparison is relative for large
gradients and absolute below magnitude 1:

    error_i = |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import Tensor, gradients, parameter

__all__ = ["GradCheckReport", "check_gradients"]


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic vs central-difference gradients."""

    passed: bool
    max_error: float
    errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray

    def __bool__(self) -> bool:
        return self.passed


def check_gradients(fn: Callable[[Tensor], Tensor], point, tolerance: float = 1e-3,
                    step: float = 1e-5) -> GradCheckReport:
    """Compare the tape gradient of scalar `fn` at `point` against central differences.

    `fn` must accept a Tensor and return a scalar Tensor; it is re-evaluated
    at 2 * point.size perturbed points. Coordinates the function never uses
    come out as zero on both sides and pass trivially.
    """
    base = np.asarray(point, dtype=np.float64)
    p = parameter(base.copy())
    analytic = gradients(fn(p), {"point": p})["point"]

    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += step
        hi = float(fn(Tensor(bumped.reshape(base.shape))).data)
        bumped[i] -= 2.0 * step
        lo = float(fn(Tensor(bumped.reshape(base.shape))).data)
        numeric[i] = (hi - lo) / (2.0 * step)
    numeric = numeric.reshape(base.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    errors = np.abs(analytic - numeric) / denom
    max_error = float(errors.max()) if errors.size else 0.0
    return GradCheckReport(passed=max_error < tolerance, max_error=max_error,
                           errors=errors, analytic=analytic, numeric=numeric)
