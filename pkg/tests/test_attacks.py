import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import vertical_boundary
from robusta.attacks import (AttackConfig, BGConfig, PGDConfig, binary_search_refine, boundary_gradient,
                             ensemble_adversarial, fgsm, pgd, source_breakdown)
from robusta.errors import ConfigError, NotAdversarialError
from robusta.model_core import ConstantClassifier, DifferentiableModel, LinearClassifier, linear_margin


def boundary_model():
    """Logits (x1 - 0.5, 0.5 - x1): class 0 right of x1 = 0.5."""
    return vertical_boundary().as_model()


def random_line(rng):
    w = rng.standard_normal(2)
    return LinearClassifier.from_hyperplane(w, -(w @ rng.uniform(0.3, 0.7, 2)))


def foot_inside(lin, X):
    """Rows whose nearest boundary point lies in the unit square."""
    w, c = lin.W[0] - lin.W[1], lin.b[0] - lin.b[1]
    F = X - ((X @ w + c) / (w @ w))[:, None] * w
    return np.all((F >= 0) & (F <= 1), axis=1)


# FGSM


def test_fgsm_zero_gradient_keeps_x():
    model = ConstantClassifier(0, 2).as_model(2)
    x = np.array([0.3, 0.4])
    assert np.array_equal(fgsm(model, x, 0, 0.2), x)


def test_fgsm_steps_toward_the_boundary():
    model = boundary_model()
    x_adv = fgsm(model, [0.6, 0.5], 0, 0.2)
    assert x_adv == pytest.approx([0.4, 0.5], abs=1e-15)
    assert model.predict(x_adv) == 1


def test_fgsm_clips_at_the_face():
    # the loss of class 0 grows toward smaller x1, past the face at 0
    assert fgsm(boundary_model(), [0.05, 0.5], 0, 0.2)[0] == 0.0


# PGD


def test_single_linf_pgd_step_is_fgsm():
    model = DifferentiableModel.init([2, 8, 2], seed=2)
    X = np.random.default_rng(0).random((20, 2))
    y = model.predict(X)
    assert np.array_equal(pgd(model, X, y, PGDConfig(eps=0.1, step_size=0.1, steps=1)), fgsm(model, X, y, 0.1))


def test_pgd_zero_budget_keeps_x():
    model = DifferentiableModel.init([2, 8, 2], seed=2)
    x = np.array([0.2, 0.9])
    assert np.array_equal(pgd(model, x, model.predict(x), PGDConfig(eps=0.0)), x)


@pytest.mark.parametrize("metric", ["linf", "l2"])
def test_pgd_flips_when_budget_exceeds_margin(metric):
    model = boundary_model()
    x = np.array([0.62, 0.5])
    out = pgd(model, x, 0, PGDConfig(eps=0.2, step_size=0.02, steps=40), metric)
    assert model.predict(out) == 1
    assert np.abs(out - x).max() <= 0.2 + 1e-12


# boundary gradient


def test_bg_near_boundary_flips_quickly():
    model = boundary_model()
    x_star, flipped = boundary_gradient(model, [0.5 + 1e-7, 0.5], BGConfig(max_iters=2))
    assert flipped and model.predict(x_star) == 1


def test_bg_on_constant_classifier_never_flips():
    model = ConstantClassifier(1, 2).as_model(2)
    x_star, flipped = boundary_gradient(model, [0.3, 0.3])
    assert not flipped


def test_bg_then_refine_gives_the_margin():
    model = boundary_model()
    x = np.array([0.8, 0.5])
    x_star, flipped = boundary_gradient(model, x)
    assert flipped
    ref = binary_search_refine(model, x, x_star, tol=1e-8)
    assert np.linalg.norm(ref - x) == pytest.approx(0.3, abs=1e-6)
    assert ref[1] == pytest.approx(0.5, abs=1e-6)


# binary search


def test_refine_finds_the_crossing():
    model = boundary_model()
    ref = binary_search_refine(model, [0.2, 0.5], [0.8, 0.5], tol=1e-6)
    assert 0.5 <= ref[0] <= 0.5 + 1e-6 and ref[1] == 0.5
    assert np.linalg.norm(ref - [0.2, 0.5]) == pytest.approx(0.3, abs=1e-6)


def test_refine_keeps_a_point_already_at_the_boundary():
    model = boundary_model()
    x_adv = np.array([0.5 - 1e-8, 0.5])
    assert np.allclose(binary_search_refine(model, [0.9, 0.5], x_adv, tol=1e-6), x_adv, atol=1e-6)


def test_refine_rejects_non_adversarial_endpoint():
    with pytest.raises(NotAdversarialError):
        binary_search_refine(boundary_model(), [0.9, 0.5], [0.7, 0.5])


def test_refine_matches_analytic_margin_on_random_lines():
    rng = np.random.default_rng(5)
    for _ in range(20):
        lin = random_line(rng)
        x = rng.random(2)
        w = lin.W[0] - lin.W[1]
        # push along the normal across the boundary to get a crossing endpoint
        side = np.sign(lin.logits(x)[0] - lin.logits(x)[1])
        x_adv = x - side * w / np.linalg.norm(w) * (lin.margin(x) + 0.1)
        ref = binary_search_refine(lin.as_model(), x, x_adv, tol=1e-6)
        assert abs(np.linalg.norm(ref - x) - lin.margin(x)) <= 1e-5


def test_refine_flags_multiple_crossings():
    # z1 - z0 is a tent on (0.2, 0.4) plus a ramp after 0.8: class 1 in two pieces
    W1 = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    b1 = np.array([-0.2, -0.3, -0.4, -0.8])
    W2 = np.array([[0.0, 1.0], [0.0, -2.0], [0.0, 1.0], [0.0, 1.0]])
    model = DifferentiableModel((W1, W2), (b1, np.zeros(2)), ("relu", "softmax"))
    x, x_adv = np.array([0.1, 0.5]), np.array([0.9, 0.5])
    assert model.predict(x) == 0 and model.predict(x_adv) == 1
    ref, multi = binary_search_refine(model, x, x_adv, return_flags=True)
    assert multi
    assert ref[0] == pytest.approx(0.2, abs=1e-5)


# ensemble


def test_ensemble_matches_linear_margin():
    rng = np.random.default_rng(9)
    for _ in range(10):
        lin = random_line(rng)
        X = rng.random((30, 2))
        X = X[foot_inside(lin, X)]
        recs = ensemble_adversarial(lin, X)
        exact = linear_margin(lin, X)
        for r, m in zip(recs, exact):
            if r.flipped:
                assert abs(r.distance - m) <= 1e-4


def test_ensemble_on_constant_classifier():
    rec = ensemble_adversarial(ConstantClassifier(0, 2), np.array([0.4, 0.4]))
    assert not rec.flipped and rec.source is None
    assert rec.distance == pytest.approx(math.sqrt(2))


@given(st.integers(0, 500))
def test_ensemble_invariants(seed):
    model = DifferentiableModel.init([2, 12, 3], seed=seed)
    X = np.random.default_rng(seed).random((6, 2))
    recs = ensemble_adversarial(model, X)
    for r in recs:
        assert np.all(r.x_star >= 0) and np.all(r.x_star <= 1)
        if r.flipped:
            assert model.predict(r.x_star) != model.predict(r.x)
            assert r.distance == pytest.approx(np.linalg.norm(r.x_star - r.x), abs=1e-12)


@given(st.integers(0, 500))
def test_ensemble_upper_bounds_linear_margin(seed):
    rng = np.random.default_rng(seed)
    lin = random_line(rng)
    X = rng.random((5, 2))
    inside = foot_inside(lin, X)
    for r, m, ok in zip(ensemble_adversarial(lin, X), linear_margin(lin, X), inside):
        assert r.distance >= m - 1e-12
        if r.flipped and ok:
            assert r.distance <= m + 1e-6


def test_ensemble_is_deterministic():
    model = DifferentiableModel.init([2, 12, 2], seed=3)
    X = np.random.default_rng(3).random((8, 2))
    a, b = ensemble_adversarial(model, X), ensemble_adversarial(model, X)
    assert [r.distance for r in a] == [r.distance for r in b]


def test_breakdown_is_in_percent():
    model = DifferentiableModel.init([2, 16, 2], seed=1)
    recs = ensemble_adversarial(model, np.random.default_rng(1).random((30, 2)))
    bd = source_breakdown(recs)
    assert bd["n"] == 30
    flipped = 30 - bd["unflipped"]
    if flipped:
        assert sum(bd[s] for s in ("FGSM", "PGD", "BG")) == pytest.approx(100.0)


def test_attack_config_round_trip_and_validation():
    cfg = AttackConfig(fgsm_eps=0.1, pgd=PGDConfig(0.3, 0.01, 10), metric="linf")
    assert AttackConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        AttackConfig.from_dict({"pgd": {"radius": 1}})
