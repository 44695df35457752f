"""
Differentiable ops used by the scenario networks.

Shapes follow the channels x timesteps convention with a leading batch
axis: conv inputs are N x C x T, dense inputs are N x in (or a flat vector).
"""

import functools
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DimensionError
from app.engine.graph import Tensor, register_op


def _same_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def _add_forward(a, b):
    _same_shape("add", a, b)
    return a + b


def _sub_forward(a, b):
    _same_shape("sub", a, b)
    return a - b


def _mul_forward(a, b):
    _same_shape("mul", a, b)
    return a * b


def _div_forward(a, b):
    _same_shape("div", a, b)
    return a / b


register_op("add", _add_forward, lambda inputs, out, g: (g, g))
register_op("sub", _sub_forward, lambda inputs, out, g: (g, scale(g, -1.0)))
register_op(
    "mul",
    _mul_forward,
    lambda inputs, out, g: (mul(g, inputs[1]), mul(g, inputs[0])),
)
register_op(
    "div",
    _div_forward,
    lambda inputs, out, g: (
        div(g, inputs[1]),
        scale(div(mul(g, out), inputs[1]), -1.0),
    ),
)
register_op(
    "scale",
    lambda a, factor: a * factor,
    lambda inputs, out, g, factor: (scale(g, factor),),
)
register_op(
    "sqrt",
    np.sqrt,
    lambda inputs, out, g: (div(g, scale(out, 2.0)),),
)


def _relu_vjp(inputs, out, g):
    mask = (inputs[0].value > 0).astype(np.float64)
    return (mul(g, g.graph.constant(mask)),)


def _leaky_relu_vjp(inputs, out, g, slope):
    mask = np.where(inputs[0].value > 0, 1.0, slope)
    return (mul(g, g.graph.constant(mask)),)


register_op("relu", lambda a: np.maximum(a, 0.0), _relu_vjp)
register_op(
    "leaky_relu",
    lambda a, slope: np.where(a > 0, a, slope * a),
    _leaky_relu_vjp,
)


def add(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("mul", a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("div", a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    return a.graph.apply("scale", a, factor=float(factor))


def sqrt(a: Tensor) -> Tensor:
    return a.graph.apply("sqrt", a)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def relu(a: Tensor) -> Tensor:
    return a.graph.apply("relu", a)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    return a.graph.apply("leaky_relu", a, slope=float(slope))


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def _sum_to_forward(a, shape):
    shape = tuple(shape)
    lead = a.ndim - len(shape)
    if lead < 0:
        raise DimensionError(f"sum_to: cannot reduce {a.shape} to {shape}")
    out = a.sum(axis=tuple(range(lead))) if lead else a
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and out.shape[i] != 1)
    if axes:
        out = out.sum(axis=axes, keepdims=True)
    if out.shape != shape:
        raise DimensionError(f"sum_to: cannot reduce {a.shape} to {shape}")
    return out


def _broadcast_forward(a, shape):
    try:
        return np.array(np.broadcast_to(a, tuple(shape)))
    except ValueError as exc:
        raise DimensionError(f"broadcast_to: {a.shape} -> {tuple(shape)}: {exc}") from exc


def _reshape_forward(a, shape):
    if int(np.prod(shape)) != a.size:
        raise DimensionError(f"reshape: {a.shape} -> {tuple(shape)}")
    return a.reshape(shape)


def _transpose_forward(a):
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return a.T


register_op(
    "sum_to",
    _sum_to_forward,
    lambda inputs, out, g, shape: (broadcast_to(g, inputs[0].shape),),
)
register_op(
    "broadcast_to",
    _broadcast_forward,
    lambda inputs, out, g, shape: (sum_to(g, inputs[0].shape),),
)
register_op(
    "reshape",
    _reshape_forward,
    lambda inputs, out, g, shape: (reshape(g, inputs[0].shape),),
)
register_op("transpose", _transpose_forward, lambda inputs, out, g: (transpose(g),))


def sum_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    return a.graph.apply("sum_to", a, shape=tuple(shape))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    return a.graph.apply("broadcast_to", a, shape=tuple(shape))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return a.graph.apply("reshape", a, shape=tuple(shape))


def transpose(a: Tensor) -> Tensor:
    return a.graph.apply("transpose", a)


def total(a: Tensor) -> Tensor:
    """Sum of every element, as a 0-d tensor."""
    return sum_to(a, ())


def mean(a: Tensor) -> Tensor:
    return scale(total(a), 1.0 / a.value.size)


def _slice_forward(a, axis, start, stop):
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    return a[tuple(index)]


def _pad_forward(a, axis, before, after):
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    return np.pad(a, widths)


def _concat_forward(*arrays, axis):
    try:
        return np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc


def _concat_vjp(inputs, out, g, axis):
    grads = []
    start = 0
    for tensor in inputs:
        stop = start + tensor.shape[axis]
        grads.append(slice_axis(g, axis, start, stop))
        start = stop
    return grads


register_op(
    "slice",
    _slice_forward,
    lambda inputs, out, g, axis, start, stop: (
        pad_axis(g, axis, start, inputs[0].shape[axis] - stop),
    ),
)
register_op(
    "pad",
    _pad_forward,
    lambda inputs, out, g, axis, before, after: (
        slice_axis(g, axis, before, before + inputs[0].shape[axis]),
    ),
)
register_op("concat", _concat_forward, _concat_vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return a.graph.apply("slice", a, axis=axis, start=start, stop=stop)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    return a.graph.apply("pad", a, axis=axis, before=before, after=after)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    return tensors[0].graph.apply("concat", *tensors, axis=axis)


# ---------------------------------------------------------------------------
# Matrix products
# ---------------------------------------------------------------------------


def _matmul_forward(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return a @ b


register_op(
    "matmul",
    _matmul_forward,
    lambda inputs, out, g: (
        matmul(g, transpose(inputs[1])),
        matmul(transpose(inputs[0]), g),
    ),
)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("matmul", a, b)


def dense(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """y[j] = sum_i weight[j, i] * input[i] + bias[j]; batched over a leading axis."""
    if weight.value.ndim != 2:
        raise DimensionError(f"dense weight must be out x in, got {weight.shape}")
    out_size, in_size = weight.shape
    if bias.shape != (out_size,):
        raise DimensionError(f"dense bias shape {bias.shape} != ({out_size},)")
    flat = input.value.ndim == 1
    x = reshape(input, (1, input.value.size)) if flat else input
    if x.value.ndim != 2 or x.shape[1] != in_size:
        raise DimensionError(
            f"dense input of shape {input.shape} does not match weight {weight.shape}"
        )
    y = matmul(x, transpose(weight))
    y = add(y, broadcast_to(reshape(bias, (1, out_size)), y.shape))
    return reshape(y, (out_size,)) if flat else y


# ---------------------------------------------------------------------------
# 1D convolution family
# ---------------------------------------------------------------------------


def same_padding(length: int, kernel_size: int, stride: int) -> Tuple[int, int]:
    """(output length, left pad) for symmetric zero padding with ceil(T / stride) outputs."""
    out_len = math.ceil(length / stride)
    total_pad = max((out_len - 1) * stride + kernel_size - length, 0)
    return out_len, total_pad // 2


@functools.lru_cache(maxsize=256)
def _selection(t_in: int, t_out: int, kernel_size: int, stride: int, pad_left: int) -> np.ndarray:
    """P[t, k, i] = 1 where output step t with tap k reads input step i."""
    selection = np.zeros((t_out, kernel_size, t_in))
    for t in range(t_out):
        for k in range(kernel_size):
            i = t * stride + k - pad_left
            if 0 <= i < t_in:
                selection[t, k, i] = 1.0
    selection.setflags(write=False)
    return selection


def _conv_forward(x, w, stride, pad_left, t_in, t_out):
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1] or x.shape[2] != t_in:
        raise DimensionError(f"conv1d: input {x.shape} vs kernel {w.shape}")
    selection = _selection(t_in, t_out, w.shape[2], stride, pad_left)
    patches = np.tensordot(x, selection, axes=([2], [2]))  # n c t k
    y = np.tensordot(patches, w, axes=([1, 3], [1, 2]))  # n t o
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def _conv_transpose_forward(g, w, stride, pad_left, t_in, t_out):
    if g.ndim != 3 or w.ndim != 3 or g.shape[1] != w.shape[0] or g.shape[2] != t_out:
        raise DimensionError(f"transpose_conv1d: input {g.shape} vs kernel {w.shape}")
    selection = _selection(t_in, t_out, w.shape[2], stride, pad_left)
    a = np.tensordot(g, w, axes=([1], [0]))  # n t c k
    return np.tensordot(a, selection, axes=([1, 3], [0, 1]))  # n c i


def _conv_kernel_grad_forward(x, g, stride, pad_left, t_in, t_out, kernel_size):
    selection = _selection(t_in, t_out, kernel_size, stride, pad_left)
    patches = np.tensordot(x, selection, axes=([2], [2]))  # n c t k
    return np.tensordot(g, patches, axes=([0, 2], [0, 2]))  # o c k


def _conv_vjp(inputs, out, g, **attrs):
    x, w = inputs
    return (
        _apply_conv("conv1d_transpose", g, w, attrs),
        _apply_kernel_grad(x, g, attrs, w.shape[2]),
    )


def _conv_transpose_vjp(inputs, out, h, **attrs):
    g, w = inputs
    return (
        _apply_conv("conv1d", h, w, attrs),
        _apply_kernel_grad(h, g, attrs, w.shape[2]),
    )


def _conv_kernel_grad_vjp(inputs, out, h, kernel_size, **attrs):
    x, g = inputs
    return (
        _apply_conv("conv1d_transpose", g, h, attrs),
        _apply_conv("conv1d", x, h, attrs),
    )


def _apply_conv(name: str, a: Tensor, w: Tensor, attrs) -> Tensor:
    return a.graph.apply(name, a, w, **attrs)


def _apply_kernel_grad(x: Tensor, g: Tensor, attrs, kernel_size: int) -> Tensor:
    return x.graph.apply("conv1d_kernel_grad", x, g, kernel_size=kernel_size, **attrs)


register_op("conv1d", _conv_forward, _conv_vjp)
register_op("conv1d_transpose", _conv_transpose_forward, _conv_transpose_vjp)
register_op("conv1d_kernel_grad", _conv_kernel_grad_forward, _conv_kernel_grad_vjp)


def _add_channel_bias(y: Tensor, bias: Optional[Tensor]) -> Tensor:
    if bias is None:
        return y
    channels = y.shape[1]
    if bias.shape != (channels,):
        raise DimensionError(f"conv bias shape {bias.shape} != ({channels},)")
    return add(y, broadcast_to(reshape(bias, (1, channels, 1)), y.shape))


def _batched(input: Tensor) -> Tuple[Tensor, bool]:
    if input.value.ndim == 2:
        return reshape(input, (1,) + input.shape), True
    if input.value.ndim != 3:
        raise DimensionError(f"conv input must be C x T or N x C x T, got {input.shape}")
    return input, False


def conv1d(
    input: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
) -> Tensor:
    """
    Cross-correlation along time with symmetric zero padding.

    Kernel is C_out x C_in x K; output length is ceil(T / stride).
    """
    x, unbatched = _batched(input)
    if kernel.value.ndim != 3 or kernel.shape[1] != x.shape[1]:
        raise DimensionError(f"conv1d: input {input.shape} vs kernel {kernel.shape}")
    t_in = x.shape[2]
    t_out, pad_left = same_padding(t_in, kernel.shape[2], stride)
    attrs = dict(stride=stride, pad_left=pad_left, t_in=t_in, t_out=t_out)
    y = _add_channel_bias(_apply_conv("conv1d", x, kernel, attrs), bias)
    return reshape(y, y.shape[1:]) if unbatched else y


def transpose_conv1d(
    input: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
) -> Tensor:
    """
    Adjoint of a stride-``stride`` conv1d; output length is exactly stride * T.

    Kernel is C_in x C_out x K (the orientation of the conv it transposes).
    """
    g, unbatched = _batched(input)
    if kernel.value.ndim != 3 or kernel.shape[0] != g.shape[1]:
        raise DimensionError(
            f"transpose_conv1d: input {input.shape} vs kernel {kernel.shape}"
        )
    t_out = g.shape[2]
    t_in = stride * t_out
    _, pad_left = same_padding(t_in, kernel.shape[2], stride)
    attrs = dict(stride=stride, pad_left=pad_left, t_in=t_in, t_out=t_out)
    y = _add_channel_bias(_apply_conv("conv1d_transpose", g, kernel, attrs), bias)
    return reshape(y, y.shape[1:]) if unbatched else y


def uniform_init(
    shape: Sequence[int], fan_in: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform weights in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
    if fan_in <= 0:
        raise DimensionError(f"fan_in must be positive, got {fan_in}")
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=tuple(shape))
