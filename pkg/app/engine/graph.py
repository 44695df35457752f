"""
Computation graph with reverse-mode differentiation.

Nodes are appended in creation order, which is always a valid topological
order. Every vector-Jacobian product is written with graph ops, so a
backward pass run with ``create_graph=True`` is itself recorded and can be
differentiated again (needed for the gradient penalty).
"""

import contextlib
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

LEAF_OPS = ("constant", "variable")


@dataclass(frozen=True)
class OpDef:
    """Forward function on arrays plus a VJP on graph tensors."""

    name: str
    forward: Callable[..., np.ndarray]
    vjp: Optional[Callable[..., Sequence[Optional["Tensor"]]]] = None


OPS: Dict[str, OpDef] = {}


def register_op(name: str, forward, vjp=None) -> OpDef:
    op = OpDef(name, forward, vjp)
    OPS[name] = op
    return op


class Tensor:
    """A value recorded on a Graph. Values are read-only float64 arrays."""

    __slots__ = ("graph", "id", "op", "inputs", "attrs", "value", "requires_grad")

    def __init__(
        self,
        graph: "Graph",
        op: str,
        inputs: Tuple["Tensor", ...],
        attrs: Dict[str, Any],
        value: np.ndarray,
        requires_grad: bool,
    ):
        self.graph = graph
        self.id = -1
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.value.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("add", self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("sub", self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("mul", self, other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return self.graph.apply("div", self, other)

    def __neg__(self) -> "Tensor":
        return self.graph.apply("scale", self, factor=-1.0)


class Graph:
    """
    Records tensors and their producing ops.

    ``higher_order=True`` allows backward passes to be recorded
    (``create_graph=True``), which is what ``input_gradient`` needs.
    """

    def __init__(self, higher_order: bool = False):
        self.higher_order = higher_order
        self.nodes: List[Tensor] = []
        self._recording = True

    @contextlib.contextmanager
    def paused(self) -> Iterator[None]:
        """Evaluate ops without recording them."""
        previous = self._recording
        self._recording = False
        try:
            yield
        finally:
            self._recording = previous

    def _record(self, node: Tensor) -> Tensor:
        if self._recording:
            node.id = len(self.nodes)
            self.nodes.append(node)
        return node

    def constant(self, value) -> Tensor:
        array = np.array(value, dtype=np.float64)
        array.setflags(write=False)
        return self._record(Tensor(self, "constant", (), {}, array, False))

    def variable(self, value) -> Tensor:
        array = np.array(value, dtype=np.float64)
        array.setflags(write=False)
        return self._record(Tensor(self, "variable", (), {}, array, self._recording))

    def apply(self, op_name: str, *inputs: Tensor, **attrs) -> Tensor:
        op = OPS[op_name]
        for tensor in inputs:
            if tensor.graph is not self:
                raise ContractError(f"{op_name}: inputs belong to different graphs")
        value = op.forward(*(t.value for t in inputs), **attrs)
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{op_name} produced non-finite values")
        value.setflags(write=False)
        requires_grad = self._recording and any(t.requires_grad for t in inputs)
        node = Tensor(self, op_name, tuple(inputs), attrs, value, requires_grad)
        if requires_grad:
            self._record(node)
        return node

    def gradients(
        self,
        output: Tensor,
        wrt: Sequence[Tensor],
        create_graph: bool = False,
    ) -> List[Tensor]:
        """
        Gradients of a single-valued output with respect to ``wrt``.

        With ``create_graph=True`` the backward pass is recorded, so the
        returned tensors are differentiable functions of the graph's
        variables.
        """
        if create_graph and not self.higher_order:
            raise ContractError(
                "create_graph requires a graph built with higher_order=True"
            )
        if output.value.size != 1:
            raise ContractError(
                f"gradients need a single-valued output, got shape {output.shape}"
            )

        grads: Dict[int, Tensor] = {}
        context = contextlib.nullcontext() if create_graph else self.paused()
        with context:
            if output.requires_grad and output.id >= 0:
                grads[output.id] = self.constant(np.ones_like(output.value))
                for node in reversed(self.nodes[: output.id + 1]):
                    if node.op in LEAF_OPS:
                        continue
                    grad = grads.get(node.id)
                    if grad is None:
                        continue
                    input_grads = OPS[node.op].vjp(node.inputs, node, grad, **node.attrs)
                    for tensor, input_grad in zip(node.inputs, input_grads):
                        if input_grad is None or not tensor.requires_grad:
                            continue
                        if input_grad.shape != tensor.shape:
                            raise DimensionError(
                                f"VJP of {node.op} returned shape {input_grad.shape} "
                                f"for input of shape {tensor.shape}"
                            )
                        previous = grads.get(tensor.id)
                        grads[tensor.id] = (
                            input_grad if previous is None else self.apply("add", previous, input_grad)
                        )

            results = []
            for tensor in wrt:
                grad = grads.get(tensor.id) if tensor.id >= 0 else None
                results.append(grad if grad is not None else self.constant(np.zeros_like(tensor.value)))
        return results


def input_gradient(output: Tensor, input_node: Tensor) -> Tensor:
    """
    Gradient of ``output`` with respect to ``input_node``, recorded on the graph.

    The result is differentiable, so functions of it (e.g. a gradient
    penalty) can be backpropagated to the network parameters.
    """
    graph = output.graph
    if not graph.higher_order:
        raise ContractError("input_gradient requires a graph built with higher_order=True")
    if not input_node.requires_grad:
        raise ContractError("input_gradient needs the input to be a graph variable")
    return graph.gradients(output, [input_node], create_graph=True)[0]


def numerical_gradient(
    func: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central finite differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = func(x)
        flat[i] = original - h
        lower = func(x)
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2 * h)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """Norm of the difference relative to the larger of the two norms."""
    scale = max(np.linalg.norm(actual), np.linalg.norm(expected), 1e-12)
    return float(np.linalg.norm(np.asarray(actual) - np.asarray(expected)) / scale)
