"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from hybridmo.models import FlatParams, MlpSpec, bind_params, flat_grad, mlp_forward


def flat_fd_error(loss_and_grad, params: FlatParams, step: float = 1e-5) -> float:
    """Max relative error between an analytic flat gradient and central differences.

    ``loss_and_grad(params)`` returns ``(loss, grad)``. The denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    _, analytic = loss_and_grad(params)
    numeric = np.zeros(len(params))
    for i in range(len(params)):
        plus, minus = params.data.copy(), params.data.copy()
        plus[i] += step
        minus[i] -= step
        numeric[i] = (loss_and_grad(params.with_data(plus))[0] - loss_and_grad(params.with_data(minus))[0]) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def mlp_loss_and_grad(spec: MlpSpec, x, y, loss_kind: str = "mean_sq_error"):
    def f(params: FlatParams):
        from hybridmo.tensor import Graph

        g = Graph()
        nodes = bind_params(g, params)
        out = mlp_forward(g, spec, nodes, g.constant(x))
        if loss_kind == "logistic":
            loss = g.apply("logistic_loss_with_logits", [out], target=1)
        else:
            loss = g.apply(loss_kind, [out, g.constant(y)])
        return float(g.value(loss)), flat_grad(g.backward(loss), nodes)

    return f


def mlp_fd_error(params, spec, x, y, loss_kind: str = "mean_sq_error") -> float:
    return flat_fd_error(mlp_loss_and_grad(spec, x, y, loss_kind), params)
