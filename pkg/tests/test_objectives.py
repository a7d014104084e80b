import math

import numpy as np
import pytest

from hybridmo.models import MlpSpec, bind_params, flat_grad, init_mlp, mlp_forward
from hybridmo.objectives import (
    AnalyticProblem,
    EvalBatch,
    ObjectiveConfig,
    QUADRATIC_PAIR,
    adversarial_losses,
    analytic_eval,
    analytic_pf,
    block_mean,
    composite_f2,
    concave_front,
    f2_node,
    gen_adv_node,
    make_toy_sr_dataset,
    perceptual_proxy,
    pixel_loss,
    pixel_loss_node,
    quadratic_pair,
    reference_front,
)
from hybridmo.tensor import Graph

from helpers import flat_fd_error

GEN = MlpSpec((8, 5, 32))
DISC = MlpSpec((32, 6, 1))


def test_pixel_loss_examples(rng):
    assert pixel_loss([1.0, 3.0], [0.0, 0.0]) == 2.0
    a, b = rng.normal(size=(3, 32)), rng.normal(size=(3, 32))
    assert pixel_loss(a, a) == 0.0
    assert pixel_loss(a + 5.0, b + 5.0) == pytest.approx(pixel_loss(a, b), rel=1e-14)
    with pytest.raises(ValueError):
        pixel_loss(np.ones(3), np.ones(4))


def test_perceptual_proxy_properties(rng):
    a, b = rng.normal(size=(4, 32)), rng.normal(size=(4, 32))
    assert perceptual_proxy(a, a) == 0.0
    assert perceptual_proxy(a, b) == perceptual_proxy(b, a) > 0
    assert perceptual_proxy(a, b) == perceptual_proxy(a.copy(), b.copy())
    with pytest.raises(ValueError):
        perceptual_proxy(np.ones((1, 8)), np.ones((1, 8)))


def test_adversarial_losses_at_zero_logits(rng):
    disc = init_mlp(DISC, 0)
    disc = disc.with_data(np.zeros(len(disc)))
    gen_loss, disc_loss = adversarial_losses(disc, DISC, rng.normal(size=(5, 32)), rng.normal(size=(5, 32)))
    assert gen_loss == pytest.approx(math.log(2), abs=1e-15)
    assert disc_loss == pytest.approx(2 * math.log(2), abs=1e-15)


def test_confident_discriminator_has_small_loss():
    # single linear unit reading coordinate 0: real signals +1, fakes -1, logit = 20 * x0
    spec = MlpSpec((32, 1))
    w = np.zeros((32, 1))
    w[0, 0] = 20.0
    from hybridmo.models import pack_layers

    disc = pack_layers(["W0", "b0"], [w, np.zeros(1)])
    real, fake = np.zeros((3, 32)), np.zeros((3, 32))
    real[:, 0], fake[:, 0] = 1.0, -1.0
    _, disc_loss = adversarial_losses(disc, spec, fake, real)
    assert disc_loss < 2 * math.log1p(math.exp(-20.0)) + 1e-8


def test_composite_f2_alpha_linearity(rng):
    disc = init_mlp(DISC, 1)
    pred, target = rng.normal(size=(4, 32)), rng.normal(size=(4, 32))
    base = composite_f2(pred, target, disc, DISC, ObjectiveConfig(alpha=0.0))
    assert base == perceptual_proxy(pred, target)
    gen_loss, _ = adversarial_losses(disc, DISC, pred, target)
    with_adv = composite_f2(pred, target, disc, DISC, ObjectiveConfig(alpha=0.01))
    assert with_adv - base == pytest.approx(0.01 * gen_loss, rel=1e-12)
    assert ObjectiveConfig().alpha == 0.005


def _gen_objective(which, x, y, disc):
    def f(params):
        g = Graph()
        nodes = bind_params(g, params)
        pred = mlp_forward(g, GEN, nodes, g.constant(x))
        if which == "f1":
            loss = pixel_loss_node(g, pred, y)
        elif which == "adv":
            loss = gen_adv_node(g, pred, disc, DISC)
        else:
            loss = f2_node(g, pred, y, disc, DISC, ObjectiveConfig())
        return float(g.value(loss)), flat_grad(g.backward(loss), nodes)

    return f


@pytest.mark.parametrize("which", ["f1", "f2", "adv"])
def test_objective_gradients_match_finite_differences(which):
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng([seed, 3])
        # odd batch: sign sums in the l1 bias gradient cannot cancel to an exact zero
        x, y = r.normal(size=(5, 8)), r.normal(size=(5, 32))
        params = init_mlp(GEN, seed)
        params = params.with_data(params.data + 0.05 * r.normal(size=len(params)))
        worst = max(worst, flat_fd_error(_gen_objective(which, x, y, init_mlp(DISC, 100 + seed)), params))
    assert worst < 1e-4


def test_quadratic_pair_examples():
    p = AnalyticProblem(QUADRATIC_PAIR, 2, np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    values, g1, g2 = analytic_eval(p, [0.5, 0.0])
    assert tuple(values) == (0.25, 0.25)
    values, g1, _ = analytic_eval(p, [0.0, 0.0])
    assert values.f1 == 0.0 and not g1.any()
    assert analytic_pf(p, 0.5) == (0.25, 0.25)
    assert analytic_pf(p, 0.0) == (0.0, 1.0)
    with pytest.raises(ValueError):
        analytic_pf(p, 1.5)
    with pytest.raises(ValueError):
        analytic_eval(p, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        AnalyticProblem(QUADRATIC_PAIR, 2, np.zeros(2), np.zeros(2))


def test_concave_front_examples():
    p = concave_front(8)
    x = np.full(8, -800.0)
    x[0] = 0.0
    values, _, _ = analytic_eval(p, x)
    assert values.f1 == 0.5 and values.f2 == 0.75
    assert analytic_pf(p, 1.0) == (1.0, 0.0)
    with pytest.raises(ValueError):
        concave_front(1)


@pytest.mark.parametrize("kind", ["quadratic", "concave"])
def test_analytic_gradients(kind, rng):
    p = quadratic_pair(6, 3) if kind == "quadratic" else concave_front(6)
    from hybridmo.models import vector_params

    for i in range(2):
        def f(params, i=i):
            values, g1, g2 = analytic_eval(p, params.data)
            return values[i], (g1, g2)[i]

        for _ in range(10):
            assert flat_fd_error(f, vector_params(rng.normal(size=6))) < 1e-6


def test_quadratic_segment_is_pareto_optimal(rng):
    p = quadratic_pair(5, 0)
    d = p.b - p.a
    for _ in range(200):
        x = p.a + rng.normal(size=5)
        t = float(np.clip((x - p.a) @ d / (d @ d), 0, 1))
        proj = p.a + t * d
        fx, fp = analytic_eval(p, x)[0], analytic_eval(p, proj)[0]
        assert fp.f1 <= fx.f1 + 1e-12 and fp.f2 <= fx.f2 + 1e-12
        assert tuple(fp) == pytest.approx(analytic_pf(p, t), abs=1e-12)


def test_reference_front_shape():
    ref = reference_front(concave_front(4))
    assert ref.shape == (101, 2) and ref[0].tolist() == [0.0, 1.0] and ref[-1].tolist() == [1.0, 0.0]


def test_dataset_determinism_and_split():
    a, b = make_toy_sr_dataset(3, 100), make_toy_sr_dataset(3, 100)
    for s in ("train", "validation", "eval"):
        x, y = getattr(a, s), getattr(b, s)
        assert x.inputs.tobytes() == y.inputs.tobytes() and x.targets.tobytes() == y.targets.tobytes()
    assert (len(a.train), len(a.validation), len(a.eval)) == (80, 10, 10)
    assert a.train.inputs.shape == (80, 8) and a.train.targets.shape == (80, 32)
    np.testing.assert_allclose(block_mean(a.eval.targets, 4), a.eval.inputs, atol=1e-15)
    with pytest.raises(ValueError):
        make_toy_sr_dataset(0, 5)
    with pytest.raises(ValueError):
        make_toy_sr_dataset(0, 20, d_hr=30)


def test_block_mean_examples():
    np.testing.assert_allclose(block_mean(np.full(32, 0.3), 4), np.full((1, 8), 0.3), rtol=0, atol=1e-16)
    hr = np.array([0.0, 0.0, 4.0, 4.0] + [1.0] * 28)
    assert block_mean(hr, 4)[0, 0] == 2.0


def test_eval_batch_validation():
    with pytest.raises(ValueError):
        EvalBatch(np.ones((2, 8)), np.ones((3, 32)))
    with pytest.raises(ValueError):
        EvalBatch(np.full((1, 8), np.nan), np.ones((1, 32)))
