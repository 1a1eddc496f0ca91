"""
Finite-difference verification of analytic gradients.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from vgce.core.exceptions import NonFiniteError, ShapeError
from vgce.numerics.autodiff import DiffNode, backward, zero_grad


@dataclass
class GradientCheckReport:
    max_rel_err: float
    global_rel_err: float
    passed: bool
    n_coordinates: int
    worst: Optional[Tuple[int, Tuple[int, int]]] = None  # (parameter position, coordinate)
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0


def _evaluate(f: Callable[[], DiffNode]) -> float:
    value = f().item()
    if not np.isfinite(value):
        raise NonFiniteError("finite_difference_check", "objective evaluated to a non-finite value")
    return value


def finite_difference_check(
    f: Callable[[], DiffNode],
    params: Sequence[DiffNode],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    analytic_grads: Optional[Sequence[np.ndarray]] = None,
    floor: float = 1e-8,
) -> GradientCheckReport:
    """Compare analytic gradients of ``f`` with central differences, coordinate by coordinate.

    ``f`` takes no arguments and reads the current values of ``params``, which
    are perturbed in place and restored. Relative error per coordinate is
    |a - n| / max(|a|, |n|, floor). When ``analytic_grads`` is given it is
    checked instead of the gradients produced by backward().
    """
    if step <= 0:
        raise ValueError("step must be positive")

    if analytic_grads is None:
        zero_grad(params)
        backward(f())
        analytic: List[np.ndarray] = [p.grad.copy() for p in params]
    else:
        analytic = [np.asarray(g, dtype=np.float64) for g in analytic_grads]
        for p, g in zip(params, analytic):
            if p.shape != g.shape:
                raise ShapeError(f"analytic gradient {g.shape} does not match parameter {p.shape}")

    max_rel = 0.0
    worst = None
    worst_pair = (0.0, 0.0)
    diff_sq = 0.0
    a_sq = 0.0
    n_sq = 0.0
    count = 0

    for pos, (p, a_grad) in enumerate(zip(params, analytic)):
        for coord in np.ndindex(*p.shape):
            original = p.value[coord]
            p.value[coord] = original + step
            plus = _evaluate(f)
            p.value[coord] = original - step
            minus = _evaluate(f)
            p.value[coord] = original

            numeric = (plus - minus) / (2.0 * step)
            a = float(a_grad[coord])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if worst is None or rel > max_rel:
                max_rel = rel
                worst = (pos, tuple(int(c) for c in coord))
                worst_pair = (a, numeric)
            diff_sq += (a - numeric) ** 2
            a_sq += a * a
            n_sq += numeric * numeric
            count += 1

    global_rel = float(np.sqrt(diff_sq) / max(np.sqrt(a_sq), np.sqrt(n_sq), floor))
    return GradientCheckReport(
        max_rel_err=float(max_rel),
        global_rel_err=global_rel,
        passed=bool(max_rel < tolerance),
        n_coordinates=count,
        worst=worst,
        worst_analytic=worst_pair[0],
        worst_numeric=worst_pair[1],
    )
