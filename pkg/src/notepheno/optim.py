"""Adadelta parameter updates over named arrays.

Zeiler's rule with no global learning-rate factor: running averages of squared
gradients and squared updates set the per-coordinate step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdadeltaState:
    """Accumulators mirroring every named parameter array."""

    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_update: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdadeltaState":
        return cls(
            sq_grad={k: np.zeros_like(v) for k, v in params.items()},
            sq_update={k: np.zeros_like(v) for k, v in params.items()},
        )


def adadelta_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdadeltaState,
    rho: float,
    eps: float,
):
    """One in-place adadelta update of every parameter array.

    E[g2] <- rho E[g2] + (1-rho) g2
    delta  = -(sqrt(E[dx2] + eps) / sqrt(E[g2] + eps)) * g
    E[dx2] <- rho E[dx2] + (1-rho) delta2
    """
    for name, param in params.items():
        g = grads[name]
        eg2 = state.sq_grad[name]
        edx2 = state.sq_update[name]
        eg2 *= rho
        eg2 += (1.0 - rho) * g * g
        delta = -np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps) * g
        edx2 *= rho
        edx2 += (1.0 - rho) * delta * delta
        param += delta
