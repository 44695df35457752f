from app.engine import ops
from app.engine.graph import Graph, Tensor, input_gradient, numerical_gradient, relative_error
from app.engine.ops import conv1d, dense, transpose_conv1d, uniform_init
from app.engine.optim import AdamState, adam_step
from app.engine.spectral import SpectralState, spectral_normalize

__all__ = [
    "ops",
    "Graph",
    "Tensor",
    "input_gradient",
    "numerical_gradient",
    "relative_error",
    "conv1d",
    "dense",
    "transpose_conv1d",
    "uniform_init",
    "AdamState",
    "adam_step",
    "SpectralState",
    "spectral_normalize",
]
