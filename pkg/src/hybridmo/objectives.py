"""Objective functions, analytic benchmark problems and the toy SR dataset.

f1 is the fidelity loss (mean absolute error). f2 is the perceptual
composite: feature-space distance under a frozen random network plus
``alpha`` times the non-saturating adversarial generator loss.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from hybridmo.models import FlatParams, MlpSpec, bind_params, check_layout, init_mlp, mlp_forward, predict
from hybridmo.tensor import Graph


class ObjectiveValues(NamedTuple):
    f1: float
    f2: float


@dataclass(frozen=True, eq=False)
class EvalBatch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise ValueError(f"batch sizes differ or are empty: {x.shape[0]} vs {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("batch contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> EvalBatch:
        idx = np.asarray(idx)
        return EvalBatch(self.inputs[idx], self.targets[idx])


DEFAULT_FEATURE_SPEC = MlpSpec((32, 32, 16), hidden_activation="leaky_relu", output_activation="leaky_relu")


@dataclass(frozen=True)
class ObjectiveConfig:
    alpha: float = 0.005
    feature_seed: int = 1234
    feature_spec: MlpSpec = field(default_factory=lambda: DEFAULT_FEATURE_SPEC)

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


@functools.lru_cache(maxsize=16)
def feature_network(spec: MlpSpec, seed: int) -> FlatParams:
    """The frozen feature extractor; never trained."""
    return init_mlp(spec, seed)


def _check_pair(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")


# -- graph builders ---------------------------------------------------------

def pixel_loss_node(graph: Graph, pred: int, target: np.ndarray) -> int:
    return graph.apply("mean_abs_error", [pred, graph.constant(target)])


def perceptual_node(graph: Graph, pred: int, target: np.ndarray, config: ObjectiveConfig) -> int:
    spec = config.feature_spec
    feat = feature_network(spec, config.feature_seed)
    pred_feat = mlp_forward(graph, spec, bind_params(graph, feat, requires_grad=False), pred)
    target_feat = graph.constant(predict(feat, spec, target))
    return graph.apply("mean_sq_error", [pred_feat, target_feat])


def gen_adv_node(graph: Graph, pred: int, disc: FlatParams, disc_spec: MlpSpec) -> int:
    check_layout(disc, disc_spec)
    logits = mlp_forward(graph, disc_spec, bind_params(graph, disc, requires_grad=False), pred)
    return graph.apply("logistic_loss_with_logits", [logits], target=1)


def f2_node(graph: Graph, pred: int, target: np.ndarray, disc: FlatParams | None, disc_spec: MlpSpec | None,
            config: ObjectiveConfig) -> int:
    percep = perceptual_node(graph, pred, target, config)
    if disc is None or config.alpha == 0:
        return percep
    adv = gen_adv_node(graph, pred, disc, disc_spec)
    return graph.apply("add", [percep, graph.apply("scalar_scale", [adv], c=config.alpha)])


def disc_loss_graph(disc: FlatParams, disc_spec: MlpSpec, pred: np.ndarray, real: np.ndarray) -> tuple[Graph, int, list[int]]:
    """Discriminator loss with ``pred`` and ``real`` as constants; returns (graph, loss, disc layer nodes)."""
    check_layout(disc, disc_spec)
    g = Graph()
    nodes = bind_params(g, disc, requires_grad=True)
    real_logits = mlp_forward(g, disc_spec, nodes, g.constant(real))
    fake_logits = mlp_forward(g, disc_spec, nodes, g.constant(pred))
    loss = g.apply("add", [
        g.apply("logistic_loss_with_logits", [real_logits], target=1),
        g.apply("logistic_loss_with_logits", [fake_logits], target=0),
    ])
    return g, loss, nodes


# -- numeric wrappers -------------------------------------------------------

def pixel_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def perceptual_proxy(pred, target, config: ObjectiveConfig = ObjectiveConfig()) -> float:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    _check_pair(pred, target)
    spec = config.feature_spec
    if pred.shape[1] != spec.widths[0]:
        raise ValueError(f"signal width {pred.shape[1]} does not match feature input width {spec.widths[0]}")
    feat = feature_network(spec, config.feature_seed)
    return float(np.mean((predict(feat, spec, pred) - predict(feat, spec, target)) ** 2))


def adversarial_losses(disc: FlatParams, disc_spec: MlpSpec, pred, real) -> tuple[float, float]:
    """(generator loss, discriminator loss) in the non-saturating logistic form."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    g = Graph()
    gen = gen_adv_node(g, g.constant(pred), disc, disc_spec)
    dgraph, dloss, _ = disc_loss_graph(disc, disc_spec, pred, real)
    return float(g.value(gen)), float(dgraph.value(dloss))


def composite_f2(pred, target, disc: FlatParams | None, disc_spec: MlpSpec | None,
                 config: ObjectiveConfig = ObjectiveConfig()) -> float:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    _check_pair(pred, target)
    g = Graph()
    return float(g.value(f2_node(g, g.constant(pred), target, disc, disc_spec, config)))


# -- analytic problems --------------------------------------------------------

QUADRATIC_PAIR = "convex-quadratic-pair"
CONCAVE_FRONT = "concave-front"


@dataclass(frozen=True, eq=False)
class AnalyticProblem:
    """Bi-objective test problem with a known front.

    ``a`` and ``b`` are the anchors of the quadratic pair (unused for the
    concave-front problem).
    """

    kind: str
    dimension: int
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (QUADRATIC_PAIR, CONCAVE_FRONT):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if self.kind == CONCAVE_FRONT and self.dimension < 2:
            raise ValueError("the concave-front problem needs dimension >= 2")
        if self.kind == QUADRATIC_PAIR:
            a = np.asarray(self.a, dtype=np.float64).reshape(-1)
            b = np.asarray(self.b, dtype=np.float64).reshape(-1)
            if a.size != self.dimension or b.size != self.dimension:
                raise ValueError("anchor length does not match dimension")
            if np.array_equal(a, b):
                raise ValueError("anchors must be distinct")
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)


def quadratic_pair(dimension: int, seed: int, separation: float = 0.5) -> AnalyticProblem:
    """Seeded anchors: ``a`` standard normal, ``b = a + separation * u`` with ``u`` a random unit vector."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=dimension)
    u = rng.normal(size=dimension)
    u /= np.linalg.norm(u)
    return AnalyticProblem(QUADRATIC_PAIR, dimension, a, a + separation * u, seed)


def concave_front(dimension: int, seed: int = 0) -> AnalyticProblem:
    return AnalyticProblem(CONCAVE_FRONT, dimension, seed=seed)


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def analytic_eval(problem: AnalyticProblem, x) -> tuple[ObjectiveValues, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != problem.dimension:
        raise ValueError(f"expected {problem.dimension} variables, got {x.size}")
    if problem.kind == QUADRATIC_PAIR:
        da, db = x - problem.a, x - problem.b
        return ObjectiveValues(float(da @ da), float(db @ db)), 2.0 * da, 2.0 * db
    s = _logistic(x)
    ds = s * (1.0 - s)
    u1 = s[0]
    g = 1.0 + 9.0 * float(np.mean(s[1:]))
    f1 = float(u1)
    f2 = g * (1.0 - (u1 / g) ** 2)  # = g - u1^2 / g
    grad1 = np.zeros_like(x)
    grad1[0] = ds[0]
    dg = 9.0 * ds[1:] / (x.size - 1)
    grad2 = np.empty_like(x)
    grad2[0] = -2.0 * u1 / g * ds[0]
    grad2[1:] = (1.0 + u1 ** 2 / g ** 2) * dg
    return ObjectiveValues(f1, float(f2)), grad1, grad2


def analytic_pf(problem: AnalyticProblem, t: float) -> tuple[float, float]:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    if problem.kind == QUADRATIC_PAIR:
        d2 = float(np.sum((problem.b - problem.a) ** 2))
        return t * t * d2, (1.0 - t) ** 2 * d2
    return t, 1.0 - t * t


def reference_front(problem: AnalyticProblem, n: int = 101) -> np.ndarray:
    """``n`` evenly spaced front samples as an (n, 2) array."""
    return np.array([analytic_pf(problem, i / (n - 1)) for i in range(n)])


# -- toy super-resolution data ------------------------------------------------

@dataclass(frozen=True)
class ToySRDataset:
    train: EvalBatch
    validation: EvalBatch
    eval: EvalBatch


def block_mean(hr: np.ndarray, factor: int) -> np.ndarray:
    hr = np.atleast_2d(np.asarray(hr, dtype=np.float64))
    if hr.shape[1] % factor:
        raise ValueError(f"signal length {hr.shape[1]} is not divisible by {factor}")
    return hr.reshape(hr.shape[0], -1, factor).mean(axis=2)


def make_toy_sr_dataset(seed: int, count: int, d_hr: int = 32, factor: int = 4) -> ToySRDataset:
    """Piecewise-constant HR signals with block-mean LR versions, split 80/10/10 by order."""
    if count < 10:
        raise ValueError(f"count must be at least 10 so every split is non-empty, got {count}")
    if factor < 1 or d_hr < 8 or d_hr % factor:
        raise ValueError(f"d_hr={d_hr} must be >= 8 and divisible by factor={factor}")
    rng = np.random.default_rng(seed)
    hr = np.empty((count, d_hr))
    for i in range(count):
        n_seg = int(rng.integers(4, 9))
        cuts = np.sort(rng.choice(np.arange(1, d_hr), size=n_seg - 1, replace=False))
        levels = rng.uniform(-1.0, 1.0, size=n_seg)
        hr[i] = np.repeat(levels, np.diff(np.concatenate([[0], cuts, [d_hr]])))
    hr += rng.normal(0.0, 0.01, size=hr.shape)
    lr = block_mean(hr, factor)
    n_train = int(math.floor(0.8 * count))
    n_val = (count - n_train) // 2
    sl = [slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, count)]
    return ToySRDataset(*(EvalBatch(lr[s], hr[s]) for s in sl))
