"""Small dense networks over a flat parameter vector.

Every optimizer and evolutionary operator in the package acts on
:class:`FlatParams`: one contiguous ``float64`` vector plus a layout that
names each layer entry (weights and biases are separate entries).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from hybridmo.tensor import Graph, GradientMap

ACTIVATIONS = ("identity", "leaky_relu", "sigmoid")


class LayoutError(ValueError):
    """A parameter layout is inconsistent or does not match a model spec."""


@dataclass(frozen=True)
class LayerLayout:
    name: str
    offset: int
    length: int
    shape: tuple[int, ...]


def _validate_layout(layout: Sequence[LayerLayout]) -> int:
    expected = 0
    names = set()
    for entry in layout:
        if entry.length <= 0:
            raise LayoutError(f"layer {entry.name!r} has non-positive length {entry.length}")
        if int(np.prod(entry.shape)) != entry.length:
            raise LayoutError(f"layer {entry.name!r}: shape {entry.shape} does not hold {entry.length} values")
        if entry.offset != expected:
            raise LayoutError(
                f"layer {entry.name!r} starts at {entry.offset}, expected {expected} (overlap or gap)"
            )
        if entry.name in names:
            raise LayoutError(f"duplicate layer name {entry.name!r}")
        names.add(entry.name)
        expected += entry.length
    return expected


@dataclass(frozen=True, eq=False)
class FlatParams:
    """Parameter vector with its per-layer layout."""

    data: np.ndarray
    layout: tuple[LayerLayout, ...]

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "layout", tuple(self.layout))
        total = _validate_layout(self.layout)
        if total != data.size:
            raise LayoutError(f"layout covers {total} values but data has {data.size}")
        if not np.all(np.isfinite(data)):
            raise LayoutError("parameters contain non-finite values")

    def __len__(self) -> int:
        return self.data.size

    def layer(self, name: str) -> np.ndarray:
        for entry in self.layout:
            if entry.name == name:
                return self.data[entry.offset:entry.offset + entry.length].reshape(entry.shape)
        raise KeyError(name)

    def layers(self) -> list[np.ndarray]:
        return [self.data[e.offset:e.offset + e.length].reshape(e.shape).copy() for e in self.layout]

    def with_data(self, data: np.ndarray) -> FlatParams:
        return FlatParams(np.array(data, dtype=np.float64), self.layout)

    def same_layout(self, other: FlatParams) -> bool:
        return self.layout == other.layout

    def bit_equal(self, other: FlatParams) -> bool:
        return self.layout == other.layout and self.data.tobytes() == other.data.tobytes()


def pack_layers(names: Sequence[str], arrays: Sequence[np.ndarray]) -> FlatParams:
    """Build a FlatParams from named per-layer arrays, in order."""
    layout = []
    offset = 0
    for name, arr in zip(names, arrays, strict=True):
        arr = np.asarray(arr, dtype=np.float64)
        layout.append(LayerLayout(name, offset, arr.size, tuple(arr.shape)))
        offset += arr.size
    data = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    return FlatParams(data, tuple(layout))


def flatten_roundtrip(params: FlatParams) -> FlatParams:
    """Unpack to per-layer tensors and repack."""
    _validate_layout(params.layout)
    return pack_layers([e.name for e in params.layout], params.layers())


def vector_params(x: np.ndarray, name: str = "x") -> FlatParams:
    """Single-entry FlatParams for a plain decision vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return FlatParams(x.copy(), (LayerLayout(name, 0, x.size, (x.size,)),))


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError(f"an MLP needs at least one layer, got widths {self.widths}")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layout(self) -> tuple[LayerLayout, ...]:
        entries = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            entries.append(LayerLayout(f"W{i}", offset, fan_in * fan_out, (fan_in, fan_out)))
            offset += fan_in * fan_out
            entries.append(LayerLayout(f"b{i}", offset, fan_out, (fan_out,)))
            offset += fan_out
        return tuple(entries)

    def n_params(self) -> int:
        return sum(e.length for e in self.layout())


def init_mlp(spec: MlpSpec, seed: int) -> FlatParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    arrays = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        arrays.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        arrays.append(np.zeros(fan_out))
    layout = spec.layout()
    return pack_layers([e.name for e in layout], arrays)


def _activate(graph: Graph, node: int, kind: str, slope: float) -> int:
    if kind == "leaky_relu":
        return graph.apply("leaky_relu", [node], slope=slope)
    if kind == "sigmoid":
        return graph.apply("sigmoid", [node])
    return node


def bind_params(graph: Graph, params: FlatParams, requires_grad: bool = True) -> list[int]:
    """Add one leaf per layout entry and return their node ids."""
    return [graph.leaf(arr, requires_grad=requires_grad) for arr in params.layers()]


def check_layout(params: FlatParams, spec: MlpSpec) -> None:
    if params.layout != spec.layout():
        raise LayoutError(f"parameter layout does not match MLP widths {spec.widths}")


def mlp_forward(graph: Graph, spec: MlpSpec, layer_nodes: Sequence[int], x: int) -> int:
    if len(layer_nodes) != 2 * spec.n_layers:
        raise LayoutError(f"expected {2 * spec.n_layers} layer nodes, got {len(layer_nodes)}")
    width = graph.value(x).shape[-1]
    if width != spec.widths[0]:
        raise LayoutError(f"input width {width} does not match spec input width {spec.widths[0]}")
    h = x
    for i in range(spec.n_layers):
        h = graph.apply("matmul", [h, layer_nodes[2 * i]])
        h = graph.apply("add", [h, layer_nodes[2 * i + 1]])
        act = spec.hidden_activation if i < spec.n_layers - 1 else spec.output_activation
        h = _activate(graph, h, act, spec.slope)
    return h


def mlp_apply(params: FlatParams, spec: MlpSpec, x, graph: Graph, requires_grad: bool = False) -> int:
    """Build the forward chain on ``graph`` and return the output node.

    ``x`` is either an existing node id or an array (added as a constant).
    """
    check_layout(params, spec)
    if not isinstance(x, (int, np.integer)):
        x = graph.constant(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return mlp_forward(graph, spec, bind_params(graph, params, requires_grad), int(x))


def predict(params: FlatParams, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Numpy forward pass, no tape."""
    check_layout(params, spec)
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[1] != spec.widths[0]:
        raise LayoutError(f"input width {h.shape[1]} does not match spec input width {spec.widths[0]}")
    layers = params.layers()
    for i in range(spec.n_layers):
        h = h @ layers[2 * i] + layers[2 * i + 1]
        act = spec.hidden_activation if i < spec.n_layers - 1 else spec.output_activation
        if act == "leaky_relu":
            h = np.where(h >= 0, h, spec.slope * h)
        elif act == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
    return h


def flat_grad(grads: GradientMap, layer_nodes: Sequence[int]) -> np.ndarray:
    return np.concatenate([grads[n].reshape(-1) for n in layer_nodes])


def as_layer_dict(params: FlatParams) -> Mapping[str, np.ndarray]:
    return {e.name: arr for e, arr in zip(params.layout, params.layers())}
