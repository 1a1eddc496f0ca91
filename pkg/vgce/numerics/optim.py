"""
Adam optimizer with bias correction.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from vgce.core.exceptions import ShapeError


@dataclass
class AdamState:
    """Moments and step counter for one parameter list (order fixed by the caller)."""
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)

    def ensure_moments(self, params: Sequence[np.ndarray]) -> None:
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
            self.second_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
            return
        if len(self.first_moment) != len(params):
            raise ShapeError(f"adam: state tracks {len(self.first_moment)} tensors, got {len(params)}")
        for m, p in zip(self.first_moment, params):
            if m.shape != p.shape:
                raise ShapeError(f"adam: moment shape {m.shape} does not match parameter {p.shape}")


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> Sequence[np.ndarray]:
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ShapeError(f"adam: {len(params)} parameters but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"adam: gradient shape {g.shape} does not match parameter {p.shape}")
    state.ensure_moments(params)

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params
