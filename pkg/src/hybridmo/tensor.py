"""Dense tensors with a small reverse-mode autodiff tape.

Tensors are plain ``float64`` numpy arrays (rank 0, 1 or 2). A :class:`Graph`
is an append-only list of primitive applications; every node caches its
forward value at construction time, so evaluation order is the node order.

Primitive kinds and their shape rules:

=========================  ==================================================
``matmul``                 (m, k) @ (k, n) -> (m, n)
``add``                    equal shapes, or (B, n) + (n,) bias broadcast
``mul``                    equal shapes, or (B, n) * (B, 1) column broadcast
``div``                    equal shapes
``leaky_relu``             any shape; attr ``slope`` in (0, 1)
``sigmoid``, ``exp``       any shape
``mean_abs_error``         equal shapes -> scalar
``mean_sq_error``          equal shapes -> scalar
``logistic_loss_with_logits``  any shape -> scalar; attr ``target`` in {0, 1}
``scalar_scale``           any shape; attr ``c``
``scalar_add``             any shape; attr ``c``
``slice_cols``             (B, n) -> (B, stop - start); attrs ``start``, ``stop``
=========================  ==================================================

Conventions at non-differentiable points: ``leaky_relu`` uses the positive
branch (gradient 1) at exactly 0 and ``mean_abs_error`` uses subgradient 0
where the residual is exactly 0.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's shape rule."""


class GraphError(ValueError):
    """Invalid graph usage (unknown node, unknown kind, non-scalar loss)."""


@dataclass
class _Node:
    kind: str
    operands: tuple[int, ...]
    attrs: dict[str, Any]
    value: Tensor
    needs_grad: bool


def _as_tensor(value) -> Tensor:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"tensors have rank <= 2, got shape {arr.shape}")
    return arr


def _softplus(x: Tensor) -> Tensor:
    return np.logaddexp(0.0, x)


def _sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _same_shape(kind: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# forward rules: (operand values, attrs) -> value
# vjp rules: (upstream grad, operand values, own value, attrs) -> operand grads


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def _vjp_matmul(g, vals, out, attrs):
    a, b = vals
    return g @ b.T, a.T @ g


def _fwd_add(vals, attrs):
    a, b = vals
    if a.shape == b.shape:
        return a + b
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return a + b[None, :]
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")


def _vjp_add(g, vals, out, attrs):
    a, b = vals
    if a.shape == b.shape:
        return g, g
    return g, g.sum(axis=0)


def _fwd_mul(vals, attrs):
    a, b = vals
    if a.shape == b.shape:
        return a * b
    if a.ndim == 2 and b.ndim == 2 and b.shape == (a.shape[0], 1):
        return a * b
    raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")


def _vjp_mul(g, vals, out, attrs):
    a, b = vals
    if a.shape == b.shape:
        return g * b, g * a
    return g * b, (g * a).sum(axis=1, keepdims=True)


def _fwd_div(vals, attrs):
    a, b = vals
    _same_shape("div", a, b)
    return a / b


def _vjp_div(g, vals, out, attrs):
    a, b = vals
    return g / b, -g * a / (b * b)


def _fwd_leaky_relu(vals, attrs):
    (x,) = vals
    return np.where(x >= 0, x, attrs["slope"] * x)


def _vjp_leaky_relu(g, vals, out, attrs):
    (x,) = vals
    return (g * np.where(x >= 0, 1.0, attrs["slope"]),)


def _fwd_sigmoid(vals, attrs):
    return _sigmoid(vals[0])


def _vjp_sigmoid(g, vals, out, attrs):
    return (g * out * (1.0 - out),)


def _fwd_exp(vals, attrs):
    return np.exp(vals[0])


def _vjp_exp(g, vals, out, attrs):
    return (g * out,)


def _fwd_mae(vals, attrs):
    a, b = vals
    _same_shape("mean_abs_error", a, b)
    return np.array(np.mean(np.abs(a - b)))


def _vjp_mae(g, vals, out, attrs):
    a, b = vals
    d = g * np.sign(a - b) / a.size
    return d, -d


def _fwd_mse(vals, attrs):
    a, b = vals
    _same_shape("mean_sq_error", a, b)
    return np.array(np.mean((a - b) ** 2))


def _vjp_mse(g, vals, out, attrs):
    a, b = vals
    d = g * 2.0 * (a - b) / a.size
    return d, -d


def _fwd_logistic(vals, attrs):
    (z,) = vals
    if attrs["target"] == 1:
        return np.array(np.mean(_softplus(-z)))
    return np.array(np.mean(_softplus(z)))


def _vjp_logistic(g, vals, out, attrs):
    (z,) = vals
    return (g * (_sigmoid(z) - attrs["target"]) / z.size,)


def _fwd_scale(vals, attrs):
    return attrs["c"] * vals[0]


def _vjp_scale(g, vals, out, attrs):
    return (attrs["c"] * g,)


def _fwd_shift(vals, attrs):
    return vals[0] + attrs["c"]


def _vjp_shift(g, vals, out, attrs):
    return (g,)


def _fwd_slice_cols(vals, attrs):
    (x,) = vals
    start, stop = attrs["start"], attrs["stop"]
    if x.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {x.shape}")
    return x[:, start:stop].copy()


def _vjp_slice_cols(g, vals, out, attrs):
    (x,) = vals
    full = np.zeros_like(x)
    full[:, attrs["start"]:attrs["stop"]] = g
    return (full,)


_PRIMITIVES: dict[str, tuple[int, Callable, Callable]] = {
    "matmul": (2, _fwd_matmul, _vjp_matmul),
    "add": (2, _fwd_add, _vjp_add),
    "mul": (2, _fwd_mul, _vjp_mul),
    "div": (2, _fwd_div, _vjp_div),
    "leaky_relu": (1, _fwd_leaky_relu, _vjp_leaky_relu),
    "sigmoid": (1, _fwd_sigmoid, _vjp_sigmoid),
    "exp": (1, _fwd_exp, _vjp_exp),
    "mean_abs_error": (2, _fwd_mae, _vjp_mae),
    "mean_sq_error": (2, _fwd_mse, _vjp_mse),
    "logistic_loss_with_logits": (1, _fwd_logistic, _vjp_logistic),
    "scalar_scale": (1, _fwd_scale, _vjp_scale),
    "scalar_add": (1, _fwd_shift, _vjp_shift),
    "slice_cols": (1, _fwd_slice_cols, _vjp_slice_cols),
}

PRIMITIVE_KINDS = frozenset(_PRIMITIVES)


def _check_attrs(kind: str, attrs: dict[str, Any]) -> None:
    if kind == "leaky_relu":
        slope = attrs.get("slope", 0.2)
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu: slope must be in (0, 1), got {slope}")
        attrs["slope"] = float(slope)
    elif kind == "logistic_loss_with_logits":
        if attrs.get("target") not in (0, 1):
            raise ValueError(f"logistic_loss_with_logits: target must be 0 or 1, got {attrs.get('target')}")
    elif kind in ("scalar_scale", "scalar_add"):
        if "c" not in attrs:
            raise ValueError(f"{kind}: missing attribute 'c'")
        attrs["c"] = float(attrs["c"])


class GradientMap:
    """Gradients of one scalar loss, keyed by node id.

    Nodes the loss does not depend on report a zero tensor of their forward shape.
    """

    def __init__(self, graph: Graph, grads: dict[int, Tensor]):
        self._graph = graph
        self._grads = grads

    def __getitem__(self, node: int) -> Tensor:
        if node in self._grads:
            return self._grads[node]
        return np.zeros_like(self._graph.value(node))

    def __contains__(self, node: int) -> bool:
        return 0 <= node < len(self._graph)


@dataclass
class Graph:
    """Append-only computation tape."""

    _nodes: list[_Node] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value, requires_grad: bool = True) -> int:
        """Add an input node; constants should pass ``requires_grad=False``."""
        self._nodes.append(_Node("leaf", (), {}, _as_tensor(value), requires_grad))
        return len(self._nodes) - 1

    def constant(self, value) -> int:
        return self.leaf(value, requires_grad=False)

    def apply(self, kind: str, operands: Sequence[int], **attrs) -> int:
        if kind not in _PRIMITIVES:
            raise GraphError(f"unknown primitive kind {kind!r}")
        arity, fwd, _ = _PRIMITIVES[kind]
        operands = tuple(int(i) for i in operands)
        if len(operands) != arity:
            raise GraphError(f"{kind}: expected {arity} operands, got {len(operands)}")
        for i in operands:
            self._check_id(i)
        _check_attrs(kind, attrs)
        vals = [self._nodes[i].value for i in operands]
        value = fwd(vals, attrs)
        needs = any(self._nodes[i].needs_grad for i in operands)
        self._nodes.append(_Node(kind, operands, attrs, value, needs))
        return len(self._nodes) - 1

    def value(self, node: int) -> Tensor:
        self._check_id(node)
        return self._nodes[node].value

    def backward(self, loss: int) -> GradientMap:
        self._check_id(loss)
        if self._nodes[loss].value.size != 1:
            raise GraphError(f"loss node {loss} is not scalar (shape {self._nodes[loss].value.shape})")
        grads: dict[int, Tensor] = {loss: np.ones_like(self._nodes[loss].value)}
        for idx in range(loss, -1, -1):
            g = grads.get(idx)
            node = self._nodes[idx]
            if g is None or not node.operands:
                continue
            vals = [self._nodes[i].value for i in node.operands]
            parts = _PRIMITIVES[node.kind][2](g, vals, node.value, node.attrs)
            for op, part in zip(node.operands, parts):
                if not self._nodes[op].needs_grad:
                    continue
                if op in grads:
                    grads[op] = grads[op] + part
                else:
                    grads[op] = part
        return GradientMap(self, grads)

    def _check_id(self, node: int) -> None:
        if not 0 <= node < len(self._nodes):
            raise GraphError(f"unknown node id {node}")


def apply_primitive(graph: Graph, kind: str, operands: Sequence[int], attrs: dict[str, Any] | None = None) -> int:
    return graph.apply(kind, operands, **(attrs or {}))


def forward_value(graph: Graph, node: int) -> Tensor:
    return graph.value(node)


def backward_grad(graph: Graph, loss: int) -> GradientMap:
    return graph.backward(loss)


def finite_diff_check(
    build: Callable[[Graph, int], int],
    params,
    step: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients with central differences.

    ``build(graph, param_node)`` must construct the same scalar loss every
    time it is called. Returns the largest relative error over all parameter
    entries, using ``max(|analytic|, |numeric|, 1e-8)`` as the denominator.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    params = _as_tensor(params)
    graph = Graph()
    p = graph.leaf(params)
    loss = build(graph, p)
    analytic = graph.backward(loss)[p]

    def loss_at(x: Tensor) -> float:
        g = Graph()
        value = float(g.value(build(g, g.leaf(x))))
        if not np.isfinite(value):
            raise FloatingPointError("non-finite loss at a perturbed point")
        return value

    numeric = np.zeros_like(params)
    flat = numeric.reshape(-1)
    for i in range(params.size):
        plus = params.copy().reshape(-1)
        minus = params.copy().reshape(-1)
        plus[i] += step
        minus[i] -= step
        flat[i] = (loss_at(plus.reshape(params.shape)) - loss_at(minus.reshape(params.shape))) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if params.size else 0.0
