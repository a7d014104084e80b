"""Adam with explicit, resettable state and a two-gradient combiner."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from hybridmo.models import FlatParams


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)

    def is_reset(self) -> bool:
        return self.t == 0 and not self.m.any() and not self.v.any()


def adam_step(params: FlatParams, grad: np.ndarray, state: AdamState) -> tuple[FlatParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.size != len(params) or state.m.size != len(params):
        raise ValueError(f"length mismatch: params {len(params)}, grad {grad.size}, state {state.m.size}")
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NonFiniteGradientError(f"non-finite gradient at index {bad[0]}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_data(new), replace(state, m=m, v=v, t=t)


def reset_state(state: AdamState) -> AdamState:
    """Zero both moments and the step counter; hyperparameters survive."""
    return replace(state, m=np.zeros_like(state.m), v=np.zeros_like(state.v), t=0)


def gradnorm_combine(grad_f1: np.ndarray, grad_f2: np.ndarray, lam: float) -> np.ndarray:
    """``lam * g1/|g1| + (1 - lam) * g2/|g2|``; near-zero gradients stay zero."""
    g1 = np.asarray(grad_f1, dtype=np.float64)
    g2 = np.asarray(grad_f2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ValueError(f"gradient shapes differ: {g1.shape} vs {g2.shape}")
    if not (np.all(np.isfinite(g1)) and np.all(np.isfinite(g2)) and np.isfinite(lam)):
        raise NonFiniteGradientError("non-finite input to gradnorm_combine")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")

    def unit(g):
        n = np.linalg.norm(g)
        return g / n if n > 1e-12 else np.zeros_like(g)

    return lam * unit(g1) + (1.0 - lam) * unit(g2)
