"""Hybrid evolutionary/gradient training loop.

A run alternates ``T_adam`` gradient epochs with ``T_ea`` evolutionary
epochs until ``T`` epochs have elapsed; the final cycle is truncated at
``T``. With the defaults (T=100, T_adam=10, T_ea=1) that is nine full
cycles (99 epochs) followed by one more gradient epoch, so 91 gradient
epochs and 9 evolutionary epochs in total.

Individual 0 holds weight 1 and is frozen at the pretrained model for the
whole run. Every random draw comes from a stream keyed on
``(master_seed, purpose, k, epoch)``, so results do not depend on the
order in which individuals are processed.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from hybridmo.adam import AdamState, adam_step, gradnorm_combine, reset_state
from hybridmo.evolution import (
    EvoConfig,
    IdealPoint,
    build_neighborhood,
    ea_replace,
    mutate,
    sample_beta,
    sbx_crossover,
    select_parents,
    tchebycheff_value,
    update_ideal,
    weight_grid,
)
from hybridmo.models import FlatParams, MlpSpec, bind_params, flat_grad, init_mlp, mlp_forward, predict, vector_params
from hybridmo.objectives import (
    CONCAVE_FRONT,
    QUADRATIC_PAIR,
    AnalyticProblem,
    EvalBatch,
    ObjectiveConfig,
    ObjectiveValues,
    analytic_eval,
    concave_front,
    disc_loss_graph,
    f2_node,
    make_toy_sr_dataset,
    pixel_loss,
    pixel_loss_node,
    quadratic_pair,
)
from hybridmo.tensor import Graph

TOY_SR = "toy-sr"
PROBLEMS = (TOY_SR, QUADRATIC_PAIR, CONCAVE_FRONT)
GRAD_COMBINE = ("weighted-sum", "gradnorm")

# stream purposes
_PRETRAIN, _ADAM, _EA, _EVAL, _INIT = 0, 1, 2, 3, 4


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if not self.eps >= 1e-12:
            raise ValueError(f"eps must be at least 1e-12, got {self.eps}")

    def fresh(self, n: int) -> AdamState:
        return AdamState.fresh(n, self.lr, self.beta1, self.beta2, self.eps)


@dataclass(frozen=True)
class ToySRConfig:
    count: int = 500
    data_seed: int = 0
    d_hr: int = 32
    factor: int = 4
    gen_hidden: tuple[int, ...] = (64,)
    disc_hidden: tuple[int, ...] = (32,)

    @property
    def d_lr(self) -> int:
        return self.d_hr // self.factor

    @property
    def gen_spec(self) -> MlpSpec:
        return MlpSpec((self.d_lr, *self.gen_hidden, self.d_hr))

    @property
    def disc_spec(self) -> MlpSpec:
        return MlpSpec((self.d_hr, *self.disc_hidden, 1))


@dataclass(frozen=True)
class TrainConfig:
    N: int = 5
    T: int = 100
    T_adam: int = 10
    T_ea: int = 1
    evo: EvoConfig = field(default_factory=EvoConfig)
    adam: AdamConfig = field(default_factory=AdamConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    problem: str = TOY_SR
    dimension: int = 16
    problem_seed: int = 0
    separation: float = 0.5
    toy: ToySRConfig = field(default_factory=ToySRConfig)
    batch_size: int = 16
    steps_per_epoch: int = 50
    eval_batch_size: int = 64
    eval_batch_seed: int = 0
    master_seed: int = 0
    pretrain_epochs: int = 20
    grad_combine: str = "weighted-sum"

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if self.T < 1 or self.T_adam < 1 or self.T_ea < 1:
            raise ValueError("T, T_adam and T_ea must all be at least 1")
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.evo.n_nbr > self.N:
            raise ValueError(f"n_nbr={self.evo.n_nbr} exceeds N={self.N}")
        if self.batch_size < 1 or self.steps_per_epoch < 1 or self.eval_batch_size < 1:
            raise ValueError("batch_size, steps_per_epoch and eval_batch_size must be positive")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be nonnegative")
        if self.grad_combine not in GRAD_COMBINE:
            raise ValueError(f"unknown grad_combine {self.grad_combine!r}; expected one of {GRAD_COMBINE}")


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def epoch_schedule(config: TrainConfig) -> list[str]:
    """Phase of each epoch 1..T: ``"adam"`` or ``"ea"``."""
    cycle = config.T_adam + config.T_ea
    return ["adam" if (e - 1) % cycle < config.T_adam else "ea" for e in range(1, config.T + 1)]


def n_adam_epochs(config: TrainConfig) -> int:
    return epoch_schedule(config).count("adam")


# ---------------------------------------------------------------------------
# tasks: what a generator is, how its objectives and gradients are computed


class Task:
    """Problem adapter used by the training loop."""

    has_discriminator = False

    def init_generator(self, seed: int) -> FlatParams:
        raise NotImplementedError

    def init_discriminator(self, seed: int) -> FlatParams | None:
        return None

    def sample_batch(self, rng: np.random.Generator, size: int) -> EvalBatch | None:
        return None

    def pixel_grad(self, gen: FlatParams, batch: EvalBatch | None) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def generator_grads(self, gen, disc, batch) -> tuple[ObjectiveValues, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def disc_grad(self, gen, disc, batch) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def evaluate(self, gen: FlatParams, disc: FlatParams | None, batch: EvalBatch | None) -> ObjectiveValues:
        raise NotImplementedError

    def log_batch(self) -> EvalBatch | None:
        return None


class AnalyticTask(Task):
    """Decision vector as the 'generator'; exact objectives and gradients."""

    def __init__(self, problem: AnalyticProblem):
        self.problem = problem

    def init_generator(self, seed: int) -> FlatParams:
        return vector_params(np.random.default_rng(seed).normal(size=self.problem.dimension))

    def pixel_grad(self, gen, batch):
        values, g1, _ = analytic_eval(self.problem, gen.data)
        return values.f1, g1

    def generator_grads(self, gen, disc, batch):
        return analytic_eval(self.problem, gen.data)

    def evaluate(self, gen, disc, batch):
        return analytic_eval(self.problem, gen.data)[0]


class ToySRTask(Task):
    """Adversarial 1-D super-resolution with dense generator and discriminator."""

    has_discriminator = True

    def __init__(self, toy: ToySRConfig, objective: ObjectiveConfig):
        self.toy = toy
        self.objective = objective
        self.gen_spec = toy.gen_spec
        self.disc_spec = toy.disc_spec
        self.data = make_toy_sr_dataset(toy.data_seed, toy.count, toy.d_hr, toy.factor)

    def init_generator(self, seed):
        return init_mlp(self.gen_spec, seed)

    def init_discriminator(self, seed):
        return init_mlp(self.disc_spec, seed)

    def sample_batch(self, rng, size):
        n = len(self.data.train)
        return self.data.train.subset(rng.choice(n, size=min(size, n), replace=False))

    def _gen_graph(self, gen, batch):
        g = Graph()
        nodes = bind_params(g, gen)
        pred = mlp_forward(g, self.gen_spec, nodes, g.constant(batch.inputs))
        return g, nodes, pred

    def pixel_grad(self, gen, batch):
        g, nodes, pred = self._gen_graph(gen, batch)
        f1 = pixel_loss_node(g, pred, batch.targets)
        return float(g.value(f1)), flat_grad(g.backward(f1), nodes)

    def generator_grads(self, gen, disc, batch):
        g, nodes, pred = self._gen_graph(gen, batch)
        f1 = pixel_loss_node(g, pred, batch.targets)
        f2 = f2_node(g, pred, batch.targets, disc, self.disc_spec, self.objective)
        values = ObjectiveValues(float(g.value(f1)), float(g.value(f2)))
        return values, flat_grad(g.backward(f1), nodes), flat_grad(g.backward(f2), nodes)

    def disc_grad(self, gen, disc, batch):
        pred = predict(gen, self.gen_spec, batch.inputs)
        g, loss, nodes = disc_loss_graph(disc, self.disc_spec, pred, batch.targets)
        return float(g.value(loss)), flat_grad(g.backward(loss), nodes)

    def evaluate(self, gen, disc, batch):
        return evaluate_sr(gen, self.gen_spec, disc, self.disc_spec, batch, self.objective)

    def log_batch(self):
        return self.data.validation


def evaluate_sr(gen: FlatParams, gen_spec: MlpSpec, disc: FlatParams | None, disc_spec: MlpSpec | None,
                batch: EvalBatch, objective: ObjectiveConfig) -> ObjectiveValues:
    """(f1, f2) of a generator on a batch, judged by ``disc``."""
    pred = predict(gen, gen_spec, batch.inputs)
    f1 = pixel_loss(pred, batch.targets)
    g = Graph()
    f2 = float(g.value(f2_node(g, g.constant(pred), batch.targets, disc, disc_spec, objective)))
    return ObjectiveValues(f1, f2)


def make_task(config: TrainConfig) -> Task:
    if config.problem == TOY_SR:
        return ToySRTask(config.toy, config.objective)
    if config.problem == QUADRATIC_PAIR:
        return AnalyticTask(quadratic_pair(config.dimension, config.problem_seed, config.separation))
    return AnalyticTask(concave_front(config.dimension, config.problem_seed))


# ---------------------------------------------------------------------------
# population


@dataclass
class Individual:
    gen: FlatParams
    disc: FlatParams | None
    gen_adam: AdamState
    disc_adam: AdamState | None
    lam: float
    last_values: ObjectiveValues | None = None
    frozen: bool = False

    def adam_states(self) -> list[AdamState]:
        return [s for s in (self.gen_adam, self.disc_adam) if s is not None]


class LogRow(NamedTuple):
    epoch: int
    phase: str
    k: int
    lam: float
    f1: float
    f2: float
    tcheb: float
    z1: float
    z2: float


@dataclass
class RunLog:
    rows: list[LogRow] = field(default_factory=list)

    def final_values(self) -> list[tuple[float, float]]:
        last = max(r.epoch for r in self.rows)
        return [(r.f1, r.f2) for r in self.rows if r.epoch == last]


@dataclass
class RunResult:
    population: list[Individual]
    log: RunLog
    theta_g0: FlatParams
    ideal: IdealPoint


def pretrain(config: TrainConfig, task: Task | None = None, history: list[float] | None = None) -> FlatParams:
    """Fidelity-only Adam training of a fresh generator."""
    task = task or make_task(config)
    gen = task.init_generator(_stream(config.master_seed, _INIT, 0, 0).integers(2**62))
    state = config.adam.fresh(len(gen))
    for epoch in range(1, config.pretrain_epochs + 1):
        rng = _stream(config.master_seed, _PRETRAIN, 0, epoch)
        losses = []
        for _ in range(config.steps_per_epoch):
            f1, grad = task.pixel_grad(gen, task.sample_batch(rng, config.batch_size))
            if not math.isfinite(f1):
                raise TrainingDivergedError(f"pretraining diverged at epoch {epoch}")
            gen, state = adam_step(gen, grad, state)
            losses.append(f1)
        if history is not None:
            history.append(float(np.mean(losses)))
    return gen


def init_population(theta_g0: FlatParams, config: TrainConfig, task: Task | None = None):
    """Clone the pretrained generator N times; returns (population, neighbourhoods, ideal point)."""
    task = task or make_task(config)
    lambdas = weight_grid(config.N)
    population = []
    for k, lam in enumerate(lambdas):
        disc = task.init_discriminator(int(_stream(config.master_seed, _INIT, k + 1, 0).integers(2**62)))
        population.append(Individual(
            gen=theta_g0.with_data(theta_g0.data.copy()),
            disc=disc,
            gen_adam=config.adam.fresh(len(theta_g0)),
            disc_adam=config.adam.fresh(len(disc)) if disc is not None else None,
            lam=float(lam),
            frozen=(k == 0),
        ))
    return population, build_neighborhood(lambdas, config.evo.n_nbr), IdealPoint()


def combine_grads(g1: np.ndarray, g2: np.ndarray, lam: float, mode: str) -> np.ndarray:
    """Generator descent direction for weight ``lam``.

    ``"weighted-sum"`` is the gradient of ``lam*f1 + (1-lam)*f2``.
    ``"gradnorm"`` rescales each gradient to unit length first; along a
    Pareto-critical set the unit gradients are antiparallel, so every
    ``lam != 0.5`` drifts to an end of the front.
    """
    if mode == "gradnorm":
        return gradnorm_combine(g1, g2, lam)
    return lam * g1 + (1.0 - lam) * g2


def _train_step(ind: Individual, task: Task, batch, where: str, mode: str) -> None:
    values, g1, g2 = task.generator_grads(ind.gen, ind.disc, batch)
    if not (math.isfinite(values.f1) and math.isfinite(values.f2)):
        raise TrainingDivergedError(f"non-finite loss at {where}")
    ind.gen, ind.gen_adam = adam_step(ind.gen, combine_grads(g1, g2, ind.lam, mode), ind.gen_adam)
    if task.has_discriminator:
        dloss, dgrad = task.disc_grad(ind.gen, ind.disc, batch)
        if not math.isfinite(dloss):
            raise TrainingDivergedError(f"non-finite discriminator loss at {where}")
        ind.disc, ind.disc_adam = adam_step(ind.disc, dgrad, ind.disc_adam)


def adam_phase(population: list[Individual], task: Task, config: TrainConfig, epoch: int) -> None:
    """One gradient epoch for every non-frozen individual (in place)."""
    for k, ind in enumerate(population):
        if ind.frozen:
            continue
        rng = _stream(config.master_seed, _ADAM, k, epoch)
        for it in range(config.steps_per_epoch):
            where = f"individual {k}, epoch {epoch}, step {it}"
            _train_step(ind, task, task.sample_batch(rng, config.batch_size), where, config.grad_combine)


def ea_step(population: list[Individual], task: Task, config: TrainConfig, z: IdealPoint,
            nbh, epoch: int, batch: EvalBatch | None, counter: list[int] | None = None) -> IdealPoint:
    """One evolutionary sweep over k = 1..N-1; replaces individuals in place."""
    n = len(population)
    for k in range(1, n):
        rng = _stream(config.master_seed, _EA, k, epoch)
        ind = population[k]
        i, j = select_parents(k, n, nbh, config.evo.delta, rng)
        beta = sample_beta(float(rng.random()), config.evo.eta)
        child = mutate(sbx_crossover(population[i].gen, population[j].gen, beta), config.evo.sigma2, rng)
        child_values = task.evaluate(child, ind.disc, batch)
        current = task.evaluate(ind.gen, ind.disc, batch)
        if counter is not None:
            counter[0] += 1
        z = update_ideal(update_ideal(z, child_values), current)
        if ea_replace(current, child_values, ind.lam, z):
            ind.gen = child
    return z


def reset_all(population: list[Individual]) -> None:
    for ind in population:
        ind.gen_adam = reset_state(ind.gen_adam)
        if ind.disc_adam is not None:
            ind.disc_adam = reset_state(ind.disc_adam)


def ea_batch(task: Task, config: TrainConfig, epoch: int) -> EvalBatch | None:
    return task.sample_batch(_stream(config.eval_batch_seed, _EVAL, 0, epoch), config.eval_batch_size)


def ea_phase(population, task, config, z, nbh, first_epoch: int) -> IdealPoint:
    """All ``T_ea`` sweeps on one fixed batch, then reset every Adam state."""
    batch = ea_batch(task, config, first_epoch)
    for j in range(config.T_ea):
        z = ea_step(population, task, config, z, nbh, first_epoch + j, batch)
    reset_all(population)
    return z


def _log_epoch(log: RunLog, population, task, epoch, phase, z) -> None:
    batch = task.log_batch()
    for k, ind in enumerate(population):
        values = task.evaluate(ind.gen, ind.disc, batch)
        ind.last_values = values
        tch = tchebycheff_value(values, ind.lam, z) if z.finite else math.nan
        log.rows.append(LogRow(epoch, phase, k, ind.lam, values.f1, values.f2, tch, z.z1, z.z2))


PhaseHook = Callable[[int, str, list[Individual]], None]


def run(config: TrainConfig, theta_g0: FlatParams | None = None, on_epoch: PhaseHook | None = None) -> RunResult:
    """Full training run. ``on_epoch(epoch, phase, population)`` fires after each epoch."""
    task = make_task(config)
    if theta_g0 is None:
        theta_g0 = pretrain(config, task)
    population, nbh, z = init_population(theta_g0, config, task)
    log = RunLog()
    _log_epoch(log, population, task, 0, "init", z)
    schedule = epoch_schedule(config)
    batch = None
    for epoch, phase in enumerate(schedule, start=1):
        if phase == "adam":
            adam_phase(population, task, config, epoch)
        else:
            if schedule[epoch - 2] != "ea":
                batch = ea_batch(task, config, epoch)
            z = ea_step(population, task, config, z, nbh, epoch, batch)
            if epoch == len(schedule) or schedule[epoch] != "ea":
                reset_all(population)
        _log_epoch(log, population, task, epoch, phase, z)
        if on_epoch is not None:
            on_epoch(epoch, phase, population)
    return RunResult(population, log, theta_g0, z)


def run_adam_baseline(config: TrainConfig, weight_list, theta_g0: FlatParams | None = None) -> RunResult:
    """Independent Adam-only models, one per weight, with the same gradient-step budget as :func:`run`."""
    weights = [float(w) for w in weight_list]
    if not weights or any(not 0.0 <= w <= 1.0 for w in weights):
        raise ValueError(f"weights must be a nonempty list in [0, 1], got {weight_list}")
    task = make_task(config)
    if theta_g0 is None:
        theta_g0 = pretrain(config, task)
    population = []
    for k, lam in enumerate(weights):
        disc = task.init_discriminator(int(_stream(config.master_seed, _INIT, k + 1, 0).integers(2**62)))
        population.append(Individual(
            gen=theta_g0.with_data(theta_g0.data.copy()),
            disc=disc,
            gen_adam=config.adam.fresh(len(theta_g0)),
            disc_adam=config.adam.fresh(len(disc)) if disc is not None else None,
            lam=lam,
        ))
    log = RunLog()
    z = IdealPoint()
    _log_epoch(log, population, task, 0, "init", z)
    for epoch in range(1, n_adam_epochs(config) + 1):
        adam_phase(population, task, config, epoch)
        _log_epoch(log, population, task, epoch, "adam", z)
    return RunResult(population, log, theta_g0, z)


def with_overrides(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)


__all__ = [
    "AdamConfig", "ToySRConfig", "TrainConfig", "Individual", "LogRow", "RunLog", "RunResult",
    "pretrain", "init_population", "adam_phase", "ea_step", "ea_phase", "run", "run_adam_baseline",
    "make_task", "evaluate_sr", "epoch_schedule", "n_adam_epochs", "combine_grads",
]
