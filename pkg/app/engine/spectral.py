"""
Spectral normalization of convolution kernels by power iteration.

The kernel C_out x C_in x K is viewed as a C_out x (C_in * K) matrix W. The
persistent vector u estimates its leading left singular vector.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.engine import ops
from app.engine.graph import Tensor

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
MAX_ITERATIONS = 1000


@dataclass
class SpectralState:
    """Power-iteration state for one kernel. Owned by a single training loop."""

    u: np.ndarray
    iterations: int = 0
    degenerate: bool = False

    @classmethod
    def initial(cls, out_channels: int, rng: np.random.Generator) -> "SpectralState":
        u = rng.standard_normal(out_channels)
        return cls(u=u / np.linalg.norm(u))


def kernel_matrix(kernel: np.ndarray) -> np.ndarray:
    return np.asarray(kernel, dtype=np.float64).reshape(kernel.shape[0], -1)


def power_iteration(
    matrix: np.ndarray,
    state: SpectralState,
    iterations: int = 1,
    tol: Optional[float] = None,
    max_iterations: int = MAX_ITERATIONS,
) -> Tuple[np.ndarray, float]:
    """
    Advance the singular vector estimates in place.

    Runs ``iterations`` updates; with ``tol`` set, keeps going (up to
    ``max_iterations`` in total) until sigma changes by at most tol * sigma.

    Returns:
        (v, sigma) where sigma = u^T W v for the updated u and v.
    """
    if np.linalg.norm(matrix) <= DEGENERATE_NORM:
        state.degenerate = True
        return np.zeros(matrix.shape[1]), 0.0

    state.degenerate = False
    u = state.u
    previous = 0.0
    done = 0
    while done < iterations or (tol is not None and done < max_iterations):
        v = matrix.T @ u
        v_norm = np.linalg.norm(v)
        if v_norm <= DEGENERATE_NORM:
            # u orthogonal to the column space; restart from the heaviest row
            u = np.zeros_like(u)
            u[int(np.argmax(np.linalg.norm(matrix, axis=1)))] = 1.0
            v = matrix.T @ u
            v_norm = np.linalg.norm(v)
        v /= v_norm
        u = matrix @ v
        sigma = np.linalg.norm(u)
        u /= sigma
        done += 1
        state.iterations += 1
        if done >= iterations and tol is not None and abs(sigma - previous) <= tol * sigma:
            break
        previous = sigma
    state.u = u
    v = matrix.T @ u
    sigma = float(np.linalg.norm(v))
    return v / sigma, sigma


def spectral_normalize(kernel: np.ndarray, state: SpectralState, iterations: int = 1) -> np.ndarray:
    """One (or more) power-iteration updates, then kernel / sigma.

    A zero kernel is returned unchanged and the state is flagged degenerate.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    _, sigma = power_iteration(kernel_matrix(kernel), state, iterations)
    if state.degenerate:
        logger.warning("Spectral normalization skipped for a zero kernel")
        return kernel.copy()
    return kernel / sigma


def spectral_normalize_tensor(kernel: Tensor, state: SpectralState) -> Tensor:
    """
    kernel / sigma on the graph, with sigma = u^T W v for the current u.

    The state is not advanced; call power_iteration once per training step.
    Gradients flow through sigma with u and v held fixed.
    """
    matrix = kernel_matrix(kernel.value)
    if np.linalg.norm(matrix) <= DEGENERATE_NORM:
        return kernel
    v = matrix.T @ state.u
    v /= np.linalg.norm(v)
    graph = kernel.graph
    outer = graph.constant(np.outer(state.u, v).reshape(kernel.shape))
    sigma = ops.total(ops.mul(kernel, outer))
    return ops.div(kernel, ops.broadcast_to(sigma, kernel.shape))


def top_singular_value(kernel: np.ndarray) -> float:
    return float(np.linalg.svd(kernel_matrix(kernel), compute_uv=False)[0])
