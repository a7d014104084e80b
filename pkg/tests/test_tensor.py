import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridmo.tensor import (
    Graph,
    GraphError,
    ShapeError,
    apply_primitive,
    backward_grad,
    finite_diff_check,
    forward_value,
)


def scalar(graph, kind, x, **attrs):
    return float(graph.value(graph.apply(kind, [graph.constant(x)], **attrs))[0])


def test_leaky_relu_negative_input():
    assert scalar(Graph(), "leaky_relu", np.array([-1.0]), slope=0.2) == pytest.approx(-0.2, abs=0)


def test_sigmoid_at_zero():
    assert scalar(Graph(), "sigmoid", np.array([0.0])) == 0.5


def test_matmul_shape():
    g = Graph()
    n = apply_primitive(g, "matmul", [g.constant(np.ones((2, 3))), g.constant(np.ones((3, 4)))])
    assert forward_value(g, n).shape == (2, 4)


def test_square_value_and_gradient():
    g = Graph()
    x = g.leaf(np.array([3.0]))
    y = g.apply("mul", [x, x])
    loss = g.apply("mean_sq_error", [y, g.constant(np.zeros(1))])  # y^2 = x^4
    assert float(g.value(y)[0]) == 9.0
    g2 = Graph()
    x2 = g2.leaf(np.array(3.0))
    sq = g2.apply("mul", [x2, x2])
    assert float(backward_grad(g2, sq)[x2]) == 6.0
    assert float(g.backward(loss)[x][0]) == pytest.approx(4 * 27.0)


def test_mean_abs_error_example():
    g = Graph()
    n = g.apply("mean_abs_error", [g.constant(np.array([1.0, 3.0])), g.constant(np.zeros(2))])
    assert float(g.value(n)) == 2.0


def test_logistic_loss_at_zero_logit():
    g = Graph()
    n = g.apply("logistic_loss_with_logits", [g.constant(np.zeros(3))], target=1)
    assert float(g.value(n)) == pytest.approx(math.log(2.0), abs=1e-15)


def test_sigmoid_derivative_at_zero():
    g = Graph()
    x = g.leaf(np.array(0.0))
    assert float(g.backward(g.apply("sigmoid", [x]))[x]) == 0.25


def test_leaky_relu_kink_uses_positive_branch():
    g = Graph()
    x = g.leaf(np.array(0.0))
    assert float(g.backward(g.apply("leaky_relu", [x], slope=0.2))[x]) == 1.0


def test_mean_abs_error_zero_residual_subgradient():
    g = Graph()
    x = g.leaf(np.array([1.0, 2.0]))
    loss = g.apply("mean_abs_error", [x, g.constant(np.array([1.0, 0.0]))])
    np.testing.assert_array_equal(g.backward(loss)[x], [0.0, 0.5])


@pytest.mark.parametrize("a_shape,b_shape", [((3,), (2, 3)), ((2, 3), (1, 3)), ((2, 3), (2,)), ((2, 3), (3, 2))])
def test_add_rejects_non_bias_broadcast(a_shape, b_shape):
    g = Graph()
    with pytest.raises(ShapeError, match="add"):
        g.apply("add", [g.constant(np.ones(a_shape)), g.constant(np.ones(b_shape))])


def test_add_bias_broadcast():
    g = Graph()
    n = g.apply("add", [g.constant(np.zeros((2, 3))), g.constant(np.array([1.0, 2.0, 3.0]))])
    np.testing.assert_array_equal(g.value(n), [[1, 2, 3], [1, 2, 3]])


def test_matmul_shape_error_names_shapes():
    g = Graph()
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        g.apply("matmul", [g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3)))])


def test_unknown_kind_and_bad_slope():
    g = Graph()
    x = g.constant(np.ones(2))
    with pytest.raises(GraphError, match="unknown primitive"):
        g.apply("conv2d", [x])
    with pytest.raises(ValueError, match="slope"):
        g.apply("leaky_relu", [x], slope=1.5)
    with pytest.raises(GraphError, match="unknown node"):
        g.value(99)


def test_backward_rejects_non_scalar_loss():
    g = Graph()
    x = g.leaf(np.ones(3))
    with pytest.raises(GraphError, match="not scalar"):
        g.backward(g.apply("sigmoid", [x]))


def test_untouched_nodes_get_zero_gradient():
    g = Graph()
    x = g.leaf(np.ones((2, 2)))
    unused = g.leaf(np.ones(5))
    loss = g.apply("mean_sq_error", [x, g.constant(np.zeros((2, 2)))])
    np.testing.assert_array_equal(g.backward(loss)[unused], np.zeros(5))


def test_quadratic_finite_difference_is_tight(rng):
    target = rng.normal(size=(3, 2))
    # central differences are exact on quadratics for any step; a wide step keeps cancellation error small
    for _ in range(20):
        err = finite_diff_check(lambda g, p: g.apply("mean_sq_error", [p, g.constant(target)]),
                                rng.normal(size=(3, 2)), step=1e-2)
        assert err < 1e-9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_diff_rejects_nonfinite_loss():
    def build(g, p):
        return g.apply("mean_sq_error", [g.apply("exp", [p]), g.constant(np.zeros(1))])

    with pytest.raises(FloatingPointError):
        finite_diff_check(build, np.array([400.0]), step=1e-5)


def test_forward_and_backward_are_deterministic(rng):
    w = rng.normal(size=(4, 3))
    x = rng.normal(size=(5, 4))

    def once():
        g = Graph()
        p = g.leaf(w)
        h = g.apply("leaky_relu", [g.apply("matmul", [g.constant(x), p])], slope=0.2)
        loss = g.apply("logistic_loss_with_logits", [h], target=0)
        return g.value(loss).copy(), g.backward(loss)[p].copy()

    (v1, g1), (v2, g2) = once(), once()
    assert v1.tobytes() == v2.tobytes() and g1.tobytes() == g2.tobytes()


# Per-primitive gradient checks: each builder maps a (3, 4) parameter to a scalar.
def _away_from_zero(x):
    return np.where(np.abs(x) < 0.1, x + 0.3 * np.sign(x + 1e-300), x)


PRIMITIVE_BUILDERS = {
    "matmul": lambda g, p, c: g.apply("mean_sq_error", [g.apply("matmul", [p, g.constant(c["B"])]), g.constant(c["T2"])]),
    "add": lambda g, p, c: g.apply("mean_sq_error", [g.apply("add", [p, g.constant(c["bias"])]), g.constant(c["T"])]),
    "mul": lambda g, p, c: g.apply("mean_sq_error", [g.apply("mul", [p, g.constant(c["col"])]), g.constant(c["T"])]),
    "div": lambda g, p, c: g.apply("mean_sq_error", [g.apply("div", [g.constant(c["T"]), g.apply("scalar_add", [g.apply("exp", [p]), ], c=1.0)]), g.constant(c["T"])]),
    "leaky_relu": lambda g, p, c: g.apply("mean_sq_error", [g.apply("leaky_relu", [p], slope=0.2), g.constant(c["T"])]),
    "sigmoid": lambda g, p, c: g.apply("mean_sq_error", [g.apply("sigmoid", [p]), g.constant(c["T"])]),
    "exp": lambda g, p, c: g.apply("mean_sq_error", [g.apply("exp", [p]), g.constant(c["T"])]),
    "mean_abs_error": lambda g, p, c: g.apply("mean_abs_error", [p, g.constant(c["T"])]),
    "mean_sq_error": lambda g, p, c: g.apply("mean_sq_error", [p, g.constant(c["T"])]),
    "logistic_loss_with_logits": lambda g, p, c: g.apply("logistic_loss_with_logits", [p], target=1),
    "scalar_scale": lambda g, p, c: g.apply("mean_sq_error", [g.apply("scalar_scale", [p], c=-2.5), g.constant(c["T"])]),
    "scalar_add": lambda g, p, c: g.apply("mean_sq_error", [g.apply("scalar_add", [p], c=0.7), g.constant(c["T"])]),
    "slice_cols": lambda g, p, c: g.apply("mean_sq_error", [g.apply("slice_cols", [p], start=1, stop=3), g.constant(c["T"][:, 1:3])]),
}


@pytest.mark.parametrize("kind", sorted(PRIMITIVE_BUILDERS))
def test_primitive_gradients_match_finite_differences(kind):
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng([seed, 7])
        consts = {"B": r.normal(size=(4, 2)), "T2": r.normal(size=(3, 2)), "T": r.normal(size=(3, 4)),
                  "bias": r.normal(size=4), "col": r.normal(size=(3, 1))}
        params = r.normal(size=(3, 4))
        if kind in ("leaky_relu", "mean_abs_error"):
            params = consts["T"] + _away_from_zero(params) if kind == "mean_abs_error" else _away_from_zero(params)
        worst = max(worst, finite_diff_check(lambda g, p: PRIMITIVE_BUILDERS[kind](g, p, consts), params))
    assert worst < 1e-4


def test_covers_every_primitive():
    from hybridmo.tensor import PRIMITIVE_KINDS

    assert set(PRIMITIVE_BUILDERS) == set(PRIMITIVE_KINDS)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(0.01, 0.99))
def test_leaky_relu_matches_piecewise_rule(xs, slope):
    x = np.array(xs)
    g = Graph()
    out = g.value(g.apply("leaky_relu", [g.constant(x)], slope=slope))
    np.testing.assert_array_equal(out, np.where(x >= 0, x, slope * x))
