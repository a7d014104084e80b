"""Layer-wise fusion of several expert generators into one.

A small regression network maps an LR input to a weight matrix ``W`` of
shape (L, N): one row per fusable layer entry, one column per expert, each
row on the probability simplex. Training runs the per-input fused generator
``sum_k W[l, k] * expert_k[l]`` end to end against the weighted GAN loss
while the experts stay frozen. The deployed model uses the mean of the
predicted matrices over a validation set.

The per-input fused forward pass never materialises fused weights: for a
dense layer ``h @ (sum_k w_k A_k) = sum_k w_k (h @ A_k)``, so each expert's
layer is applied once and the results are mixed with per-sample weights.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from hybridmo.adam import AdamState, adam_step
from hybridmo.models import FlatParams, MlpSpec, bind_params, flat_grad, init_mlp, mlp_forward, pack_layers, predict
from hybridmo.objectives import (
    EvalBatch,
    ObjectiveConfig,
    disc_loss_graph,
    gen_adv_node,
    perceptual_node,
    pixel_loss_node,
)
from hybridmo.tensor import Graph

UNIFORM = "uniform-average"
SINGLE_LAYER = "single-layer-broadcast"
LEARNABLE = "learnable-weight"
BASELINE_MODES = (UNIFORM, SINGLE_LAYER, LEARNABLE)


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorSpec:
    """Feature module (3 dense leaky-ReLU layers), mean pooling over positions, two-layer sigmoid head.

    The last feature layer has ``channels * positions`` units; pooling
    averages the ``positions`` units of each channel.
    """

    input_width: int
    n_experts: int
    n_layers: int
    feature_widths: tuple[int, int] = (32, 32)
    channels: int = 8
    positions: int = 4
    hidden: int = 16

    def __post_init__(self):
        if min(self.input_width, self.n_experts, self.n_layers, self.channels, self.positions, self.hidden) < 1:
            raise ValueError("all RegressorSpec sizes must be positive")

    @property
    def feature_spec(self) -> MlpSpec:
        return MlpSpec((self.input_width, *self.feature_widths, self.channels * self.positions),
                       hidden_activation="leaky_relu", output_activation="leaky_relu")

    @property
    def mapping_spec(self) -> MlpSpec:
        return MlpSpec((self.channels, self.hidden, self.n_layers * self.n_experts),
                       hidden_activation="leaky_relu", output_activation="sigmoid")

    @property
    def output_size(self) -> int:
        return self.n_layers * self.n_experts


@dataclass(frozen=True)
class FusionConfig:
    M: int = 50
    epochs: int = 20
    steps_per_epoch: int = 25
    batch_size: int = 16
    lr: float = 1e-4
    alpha1: float = 0.01
    alpha2: float = 1.0
    alpha3: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be at least 1, got {self.M}")
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.epochs < 0 or self.steps_per_epoch < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs >= 0, steps_per_epoch >= 1, batch_size >= 1 and lr > 0 are required")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def regressor_spec_for(experts: Sequence[FlatParams], input_width: int, **kw) -> RegressorSpec:
    return RegressorSpec(input_width, len(experts), len(experts[0].layout), **kw)


def init_regressor(spec: RegressorSpec, seed: int) -> FlatParams:
    feat = init_mlp(spec.feature_spec, seed)
    head = init_mlp(spec.mapping_spec, seed + 1)
    names = [f"feature.{e.name}" for e in feat.layout] + [f"mapping.{e.name}" for e in head.layout]
    return pack_layers(names, feat.layers() + head.layers())


def _split_nodes(spec: RegressorSpec, nodes: list[int]) -> tuple[list[int], list[int]]:
    n_feat = 2 * spec.feature_spec.n_layers
    return nodes[:n_feat], nodes[n_feat:]


def _block_indicator(n_layers: int, n_experts: int) -> np.ndarray:
    g = np.zeros((n_layers * n_experts, n_layers))
    for l in range(n_layers):
        g[l * n_experts:(l + 1) * n_experts, l] = 1.0
    return g


def regressor_graph(graph: Graph, spec: RegressorSpec, reg_nodes: list[int], x: int) -> int:
    """Per-input weights as a (B, L*N) node; column ``l*N + k`` is layer l, expert k."""
    feat_nodes, head_nodes = _split_nodes(spec, reg_nodes)
    h = mlp_forward(graph, spec.feature_spec, feat_nodes, x)
    pool = np.kron(np.eye(spec.channels), np.full((spec.positions, 1), 1.0 / spec.positions))
    h = graph.apply("matmul", [h, graph.constant(pool)])
    s = mlp_forward(graph, spec.mapping_spec, head_nodes, h)
    g = _block_indicator(spec.n_layers, spec.n_experts)
    sums = graph.apply("matmul", [graph.apply("matmul", [s, graph.constant(g)]), graph.constant(g.T)])
    return graph.apply("div", [s, sums])


def regressor_forward(reg_params: FlatParams, spec: RegressorSpec, inputs) -> np.ndarray:
    """Predicted weights, shape (B, L, N), every row summing to 1."""
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != spec.input_width:
        raise FusionError(f"input width {x.shape[1]} does not match regressor width {spec.input_width}")
    feat = FlatParams(reg_params.data[:spec.feature_spec.n_params()], spec.feature_spec.layout())
    head = FlatParams(reg_params.data[spec.feature_spec.n_params():], spec.mapping_spec.layout())
    h = predict(feat, spec.feature_spec, x)
    h = h.reshape(h.shape[0], spec.channels, spec.positions).mean(axis=2)
    s = predict(head, spec.mapping_spec, h).reshape(-1, spec.n_layers, spec.n_experts)
    sums = s.sum(axis=2, keepdims=True)
    if np.any(sums <= 0):
        raise FusionError("a weight row is entirely zero before normalisation")
    return s / sums


# ---------------------------------------------------------------------------
# fused generator


def _check_experts(experts: Sequence[FlatParams]) -> None:
    if not experts:
        raise FusionError("no experts given")
    for e in experts[1:]:
        if not e.same_layout(experts[0]):
            raise FusionError("experts have different layouts")


def _check_rows(weights: np.ndarray, tol: float) -> None:
    if np.any(weights < -tol) or np.any(np.abs(weights.sum(axis=-1) - 1.0) > tol):
        raise FusionError(f"weight rows must lie on the simplex (tolerance {tol})")


def assemble_fused(experts: Sequence[FlatParams], weights) -> FlatParams:
    """Per-layer convex combination ``sum_k W[l, k] * expert_k[l]``."""
    _check_experts(experts)
    w = np.asarray(weights, dtype=np.float64)
    layout = experts[0].layout
    if w.shape != (len(layout), len(experts)):
        raise FusionError(f"weights have shape {w.shape}, expected {(len(layout), len(experts))}")
    _check_rows(w, 1e-6)
    out = np.empty_like(experts[0].data)
    for l, entry in enumerate(layout):
        sl = slice(entry.offset, entry.offset + entry.length)
        acc = np.zeros(entry.length)
        for k, e in enumerate(experts):
            acc += w[l, k] * e.data[sl]
        out[sl] = acc
    return experts[0].with_data(out)


def fused_forward(graph: Graph, gen_spec: MlpSpec, experts: Sequence[FlatParams],
                  block: Callable[[int], int], x: int) -> int:
    """Per-sample fused generator output.

    ``block(l)`` returns a (B, N) node of mixing weights for layout entry l.
    """
    n = len(experts)
    layers = [e.layers() for e in experts]
    h = x
    for i in range(gen_spec.n_layers):
        wl, bl = 2 * i, 2 * i + 1
        wb = block(wl)
        mixed = None
        for k in range(n):
            term = graph.apply("mul", [
                graph.apply("matmul", [h, graph.constant(layers[k][wl])]),
                graph.apply("slice_cols", [wb], start=k, stop=k + 1),
            ])
            mixed = term if mixed is None else graph.apply("add", [mixed, term])
        bias = graph.apply("matmul", [block(bl), graph.constant(np.stack([layers[k][bl] for k in range(n)]))])
        h = graph.apply("add", [mixed, bias])
        act = gen_spec.hidden_activation if i < gen_spec.n_layers - 1 else gen_spec.output_activation
        if act == "leaky_relu":
            h = graph.apply("leaky_relu", [h], slope=gen_spec.slope)
        elif act == "sigmoid":
            h = graph.apply("sigmoid", [h])
    return h


def gan_loss_node(graph: Graph, pred: int, target: np.ndarray, disc: FlatParams, disc_spec: MlpSpec,
                  config: FusionConfig, objective: ObjectiveConfig) -> int:
    terms = [
        graph.apply("scalar_scale", [pixel_loss_node(graph, pred, target)], c=config.alpha1),
        graph.apply("scalar_scale", [perceptual_node(graph, pred, target, objective)], c=config.alpha2),
        graph.apply("scalar_scale", [gen_adv_node(graph, pred, disc, disc_spec)], c=config.alpha3),
    ]
    return graph.apply("add", [graph.apply("add", terms[:2]), terms[2]])


# ---------------------------------------------------------------------------
# training


@dataclass
class FusionTraining:
    params: FlatParams
    disc: FlatParams
    losses: list[float]


def _train_loop(params: FlatParams, build_weights, experts, gen_spec, data: EvalBatch, disc, disc_spec,
                config: FusionConfig, objective: ObjectiveConfig, stream_tag: int) -> FusionTraining:
    """Shared Adam loop: ``build_weights(graph, param_nodes, x_node)`` returns the block function."""
    _check_experts(experts)
    state = AdamState.fresh(len(params), lr=config.lr)
    disc_state = AdamState.fresh(len(disc), lr=config.lr)
    losses = []
    step = 0
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, stream_tag, epoch])
        for _ in range(config.steps_per_epoch):
            idx = rng.choice(len(data), size=min(config.batch_size, len(data)), replace=False)
            batch = data.subset(idx)
            g = Graph()
            nodes = bind_params(g, params)
            x = g.constant(batch.inputs)
            pred = fused_forward(g, gen_spec, experts, build_weights(g, nodes, x, len(batch)), x)
            loss = gan_loss_node(g, pred, batch.targets, disc, disc_spec, config, objective)
            value = float(g.value(loss))
            if not math.isfinite(value):
                raise FloatingPointError(f"fusion loss is non-finite at batch {step}")
            params, state = adam_step(params, flat_grad(g.backward(loss), nodes), state)
            dg, dloss, dnodes = disc_loss_graph(disc, disc_spec, g.value(pred), batch.targets)
            disc, disc_state = adam_step(disc, flat_grad(dg.backward(dloss), dnodes), disc_state)
            losses.append(value)
            step += 1
    return FusionTraining(params, disc, losses)


def train_regressor(experts: Sequence[FlatParams], gen_spec: MlpSpec, data: EvalBatch, disc: FlatParams,
                    disc_spec: MlpSpec, config: FusionConfig = FusionConfig(),
                    objective: ObjectiveConfig = ObjectiveConfig(), spec: RegressorSpec | None = None,
                    ) -> tuple[FlatParams, RegressorSpec, FusionTraining]:
    """Fit the weight regressor with experts frozen; the discriminator is co-trained."""
    spec = spec or regressor_spec_for(experts, gen_spec.widths[0])
    n = spec.n_experts

    def build(g, nodes, x, batch_size):
        w = regressor_graph(g, spec, nodes, x)
        return lambda l: g.apply("slice_cols", [w], start=l * n, stop=(l + 1) * n)

    result = _train_loop(init_regressor(spec, config.seed), build, experts, gen_spec, data, disc, disc_spec,
                         config, objective, stream_tag=0)
    return result.params, spec, result


def universal_weights(reg_params: FlatParams, spec: RegressorSpec, validation_inputs) -> np.ndarray:
    x = np.atleast_2d(np.asarray(validation_inputs, dtype=np.float64))
    if x.shape[0] < 1:
        raise FusionError("empty validation set")
    per_input = regressor_forward(reg_params, spec, x)
    total = np.zeros(per_input.shape[1:])
    for w in per_input:  # fixed order
        total += w
    return total / per_input.shape[0]


def universal_fuse(reg_params: FlatParams, spec: RegressorSpec, experts: Sequence[FlatParams],
                   validation_inputs) -> tuple[np.ndarray, FlatParams]:
    w_bar = universal_weights(reg_params, spec, validation_inputs)
    return w_bar, assemble_fused(experts, w_bar)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def learn_weights(experts: Sequence[FlatParams], gen_spec: MlpSpec, data: EvalBatch, disc: FlatParams,
                  disc_spec: MlpSpec, config: FusionConfig = FusionConfig(),
                  objective: ObjectiveConfig = ObjectiveConfig()) -> tuple[np.ndarray, FusionTraining]:
    """One (L, N) weight matrix shared by all inputs, softmax-parameterised, fitted directly."""
    n_layers, n = len(experts[0].layout), len(experts)
    logits = pack_layers(["logits"], [np.zeros((n_layers, n))])

    def build(g, nodes, x, batch_size):
        e = g.apply("exp", [nodes[0]])
        sums = g.apply("matmul", [g.apply("matmul", [e, g.constant(np.ones((n, 1)))]), g.constant(np.ones((1, n)))])
        w = g.apply("div", [e, sums])
        ones = g.constant(np.ones((batch_size, 1)))

        def block(l):
            row = g.apply("matmul", [g.constant(np.eye(n_layers)[l:l + 1]), w])
            return g.apply("matmul", [ones, row])

        return block

    result = _train_loop(logits, build, experts, gen_spec, data, disc, disc_spec, config, objective, stream_tag=1)
    return softmax_rows(result.params.layer("logits")), result


def fuse_baselines(experts: Sequence[FlatParams], mode: str, *, gen_spec: MlpSpec | None = None,
                   data: EvalBatch | None = None, disc: FlatParams | None = None, disc_spec: MlpSpec | None = None,
                   config: FusionConfig | None = None, objective: ObjectiveConfig = ObjectiveConfig(),
                   universal: np.ndarray | None = None, validation_inputs=None) -> FlatParams:
    """Ablation fusions.

    ``uniform-average`` needs only the experts. ``single-layer-broadcast``
    copies row 0 of the full method's universal weights to every layer; pass
    ``universal`` or the training inputs so the full method can be run.
    ``learnable-weight`` needs the training inputs.
    """
    _check_experts(experts)
    n_layers, n = len(experts[0].layout), len(experts)
    if mode == UNIFORM:
        return assemble_fused(experts, np.full((n_layers, n), 1.0 / n))
    needs_training = mode == LEARNABLE or (mode == SINGLE_LAYER and universal is None)
    if needs_training and (gen_spec is None or data is None or disc is None or disc_spec is None or config is None):
        raise FusionError(f"mode {mode!r} needs gen_spec, data, disc, disc_spec and config")
    if mode == SINGLE_LAYER:
        if universal is None:
            if validation_inputs is None:
                raise FusionError("single-layer-broadcast needs validation inputs to compute universal weights")
            reg, spec, _ = train_regressor(experts, gen_spec, data, disc, disc_spec, config, objective)
            universal = universal_weights(reg, spec, validation_inputs)
        universal = np.asarray(universal, dtype=np.float64)
        return assemble_fused(experts, np.repeat(universal[:1], n_layers, axis=0))
    if mode == LEARNABLE:
        weights, _ = learn_weights(experts, gen_spec, data, disc, disc_spec, config, objective)
        return assemble_fused(experts, weights)
    raise FusionError(f"unknown fusion mode {mode!r}; expected one of {BASELINE_MODES}")
