"""Evolutionary operators for the decomposition step.

Individuals are indexed from 0 in code. Index 0 carries weight 1 (pure
fidelity) and index N-1 carries weight 0 (pure perception).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hybridmo.models import FlatParams


def weight_grid(n: int) -> np.ndarray:
    """Decomposition weights ``(n-1-i)/(n-1)``: exactly 1 first, exactly 0 last."""
    if n < 2:
        raise ValueError(f"need at least 2 weights, got {n}")
    return np.array([(n - 1 - i) / (n - 1) for i in range(n)])


@dataclass(frozen=True)
class IdealPoint:
    z1: float = math.inf
    z2: float = math.inf

    @property
    def finite(self) -> bool:
        return math.isfinite(self.z1) and math.isfinite(self.z2)


@dataclass(frozen=True)
class EvoConfig:
    eta: float = 20.0
    sigma2: float = 0.01
    delta: float = 0.7
    n_nbr: int = 3

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.sigma2 >= 0:
            raise ValueError(f"sigma2 must be nonnegative, got {self.sigma2}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        if self.n_nbr < 2:
            raise ValueError(f"n_nbr must be at least 2, got {self.n_nbr}")


def build_neighborhood(lambdas, n_nbr: int) -> tuple[tuple[int, ...], ...]:
    """For each k, the ``n_nbr`` indices with nearest weight, ties to the smaller index.

    Each neighbourhood is returned sorted by distance (k itself first).
    """
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n = lambdas.size
    if not 2 <= n_nbr <= n:
        raise ValueError(f"n_nbr must be in [2, {n}], got {n_nbr}")
    out = []
    for k in range(n):
        order = sorted(range(n), key=lambda j: (abs(lambdas[j] - lambdas[k]), j))
        out.append(tuple(order[:n_nbr]))
    return tuple(out)


def sample_beta(r: float, eta: float = 20.0) -> float:
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must be in [0, 1), got {r}")
    if r < 0.5:
        return (2.0 * r) ** (1.0 / (1.0 + eta))
    return (1.0 / (2.0 - 2.0 * r)) ** (1.0 / (1.0 + eta))


def sbx_crossover(theta1: FlatParams, theta2: FlatParams, beta: float) -> FlatParams:
    """Blend two parents with one spread factor for the whole vector.

    Computes ``0.5*((1+beta)*t1 + (1-beta)*t2)`` in the equivalent form
    ``t1 + 0.5*(1-beta)*(t2-t1)``, which returns ``t1`` bit-exactly when the
    parents coincide or ``beta == 1``.
    """
    if not theta1.same_layout(theta2):
        raise ValueError("parents have different layouts")
    child = theta1.data + 0.5 * (1.0 - beta) * (theta2.data - theta1.data)
    return theta1.with_data(child)


def mutate(theta: FlatParams, sigma2: float, rng: np.random.Generator) -> FlatParams:
    """Add i.i.d. N(0, sigma2) noise to every entry (sigma2 is a variance)."""
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")
    if sigma2 == 0:
        return theta.with_data(theta.data.copy())
    return theta.with_data(theta.data + rng.normal(0.0, math.sqrt(sigma2), size=len(theta)))


def choose_pool(k: int, n: int, nbh, delta: float, rng: np.random.Generator) -> tuple[tuple[int, ...], bool]:
    """Return the mating pool for ``k`` and whether it is the neighbourhood."""
    if rng.random() < delta:
        return tuple(nbh[k]), True
    return tuple(range(n)), False


def select_parents(k: int, n: int, nbh, delta: float, rng: np.random.Generator) -> tuple[int, int]:
    pool, _ = choose_pool(k, n, nbh, delta, rng)
    if len(pool) < 2:
        raise ValueError(f"mating pool for {k} has fewer than 2 members")
    i, j = rng.choice(len(pool), size=2, replace=False)
    return pool[int(i)], pool[int(j)]


def tchebycheff_value(values, lam: float, z: IdealPoint) -> float:
    f1, f2 = float(values[0]), float(values[1])
    if not (math.isfinite(f1) and math.isfinite(f2)):
        raise ValueError(f"non-finite objective values ({f1}, {f2})")
    if not z.finite:
        raise ValueError("ideal point has not been initialised")
    return max(lam * (f1 - z.z1), (1.0 - lam) * (f2 - z.z2))


def update_ideal(z: IdealPoint, values) -> IdealPoint:
    return IdealPoint(min(z.z1, float(values[0])), min(z.z2, float(values[1])))


def ea_replace(current_values, offspring_values, lam: float, z: IdealPoint) -> bool:
    """True when the offspring strictly improves the aggregated value."""
    return tchebycheff_value(offspring_values, lam, z) < tchebycheff_value(current_values, lam, z)
