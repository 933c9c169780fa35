"""Batch first-order minimizer shared by the slot tagger and intent classifier.

Gradient descent with a Barzilai-Borwein initial step and Armijo
backtracking.  Accepted steps never increase the objective, every run with
the same inputs takes the same path, and the analytic gradient is the only
model-specific code involved -- which keeps training easy to check against
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters shared by both model trainers."""

    l2: float = 0.01
    max_iterations: int = 200
    tolerance: float = 1e-5

    def __post_init__(self):
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.max_iterations < 0 or self.tolerance <= 0:
            raise ValueError("max_iterations must be >= 0 and tolerance > 0")


@dataclass
class MinimizeResult:
    x: np.ndarray
    values: list[float]  # objective after the start point and each accepted step
    iterations: int
    converged: bool


_ARMIJO_C = 1e-4
_MAX_BACKTRACKS = 60


def minimize(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    max_iterations: int,
    tolerance: float,
) -> MinimizeResult:
    """Minimize a smooth function returning (value, gradient)."""
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    values = [f]
    prev_x = prev_g = None
    step = 1.0
    iterations = 0
    converged = bool(np.max(np.abs(g), initial=0.0) <= tolerance)
    while iterations < max_iterations and not converged:
        gg = float(g @ g)
        if prev_x is not None:
            s = x - prev_x
            y = g - prev_g
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        step = min(max(step, 1e-12), 1e6)
        alpha = step
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            x_new = x - alpha * g
            f_new, g_new = fun_grad(x_new)
            if np.isfinite(f_new) and f_new <= f - _ARMIJO_C * alpha * gg:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break  # no further progress possible at float precision
        prev_x, prev_g = x, g
        x, f, g = x_new, f_new, g_new
        values.append(f)
        iterations += 1
        converged = bool(np.max(np.abs(g), initial=0.0) <= tolerance)
    return MinimizeResult(x, values, iterations, converged)
