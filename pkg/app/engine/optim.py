"""Adam optimizer over named parameter arrays."""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from app.core.exceptions import DimensionError


@dataclass
class AdamState:
    lr: float = 2e-5
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Dict[str, np.ndarray]:
    """
    One bias-corrected Adam update.

    Args:
        params: parameter arrays by name
        grads: gradients by name; names missing here are left unchanged
        state: moments and step counter, updated in place

    Returns:
        New parameter arrays (inputs are not modified).
    """
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown parameter {name}")
        if np.shape(grad) != np.shape(params[name]):
            raise DimensionError(
                f"gradient shape {np.shape(grad)} does not match parameter "
                f"{name} of shape {np.shape(params[name])}"
            )

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t

    updated: Dict[str, np.ndarray] = {}
    for name, param in params.items():
        param = np.asarray(param, dtype=np.float64)
        if name not in grads:
            updated[name] = param.copy()
            continue
        grad = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name, np.zeros_like(param))
        v = state.v.get(name, np.zeros_like(param))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        updated[name] = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated
