import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import disk_same_side, vertical_boundary
from robusta.kernels import DegenerateKernel, Labeler, family_uniform_epsilon, uniform_ball_kernel
from robusta.model_core import ConstantClassifier, DifferentiableModel, LabeledDataset, LinearClassifier
from robusta.robustness import (H, ConstantOne, EmpiricalDensity, RobustnessSpec, analytic_linear_oracle,
                                auc_margin_curve, average_margin, dense_sampling_oracle, margin_curve,
                                min_oracle, prop1_bound, prop1_verify, rho, robustness_function,
                                score_family, score_Q)


def dataset(X, y=None, weights=None):
    X = np.asarray(X, dtype=np.float64)
    return LabeledDataset(X, np.zeros(len(X), dtype=int) if y is None else np.asarray(y), weights=weights)


# rho


def test_rho_of_constant_classifier_is_one():
    assert rho(ConstantClassifier(1), uniform_ball_kernel(0.5), [0.5, 0.5], 1000).value == 1.0


def test_rho_with_ball_inside_region():
    assert rho(vertical_boundary(), uniform_ball_kernel(0.1), [0.7, 0.5], 5000).value == 1.0


def test_rho_circular_segment():
    est = rho(vertical_boundary(), uniform_ball_kernel(0.1), [0.55, 0.5], 100_000, seed=1)
    assert disk_same_side(0.05, 0.1) == pytest.approx(0.8045, abs=1e-4)
    assert est.within(disk_same_side(0.05, 0.1), 3)


def test_rho_agrees_with_closed_form_on_random_lines():
    rng = np.random.default_rng(0)
    hits = 0
    for i in range(50):
        theta = rng.uniform(0, 2 * np.pi)
        w = np.array([np.cos(theta), np.sin(theta)])
        x = rng.uniform(0.3, 0.7, 2)
        eps = rng.uniform(0.02, 0.25)
        h = rng.uniform(0, eps)
        lin = LinearClassifier.from_hyperplane(w, -(w @ x) + h)
        # keep the disk inside the cube so clipping plays no role
        if np.any(x - eps < 0) or np.any(x + eps > 1):
            eps = float(min(x.min(), (1 - x).min()))
            h = min(h, eps)
            lin = LinearClassifier.from_hyperplane(w, -(w @ x) + h)
        est = rho(lin, uniform_ball_kernel(eps), x, 20_000, seed=i)
        hits += est.within(disk_same_side(h, eps), 3)
    assert hits >= 48


# robustness function and scores


def test_robustness_function_examples():
    f = vertical_boundary()
    spec = RobustnessSpec(oracle=analytic_linear_oracle())
    assert robustness_function(ConstantClassifier(0), uniform_ball_kernel(0.2), "identity", ConstantOne(),
                               [0.5, 0.5], RobustnessSpec(n_inner=200)) == 1.0
    assert robustness_function(f, uniform_ball_kernel(0.1), "indicator", ConstantOne(), [0.7, 0.5], spec) == 1.0
    assert robustness_function(f, uniform_ball_kernel(0.3), "indicator", ConstantOne(), [0.7, 0.5], spec) == 0.0


def test_indicator_via_margin_matches_dense_sampling():
    rng = np.random.default_rng(3)
    checked = 0
    for i in range(40):
        w = rng.standard_normal(2)
        x = rng.uniform(0.2, 0.8, 2)
        lin = LinearClassifier.from_hyperplane(w, -(w @ x) + rng.uniform(-0.2, 0.2) * np.linalg.norm(w))
        eps = rng.uniform(0.01, 0.3)
        if abs(lin.margin(x) - eps) <= 1e-3:
            continue
        via_margin = robustness_function(lin, uniform_ball_kernel(eps), "indicator", ConstantOne(), x)
        sampled = float(rho(lin, uniform_ball_kernel(eps), x, 10_000, seed=i).value == 1.0)
        assert via_margin == sampled
        checked += 1
    assert checked >= 30


@pytest.mark.parametrize("h", ["indicator", "identity"])
def test_constant_classifier_scores_one(h):
    rng = np.random.default_rng(1)
    ds = dataset(rng.random((30, 2)))
    spec = RobustnessSpec(n_inner=100)
    assert score_Q(ConstantClassifier(2), uniform_ball_kernel(0.3), h, EmpiricalDensity(ds), spec).value == 1.0
    fam = family_uniform_epsilon(m=2)
    r = score_family(ConstantClassifier(0), fam, h, EmpiricalDensity(ds), spec.replace(eps_grid=np.linspace(0, math.sqrt(2), 9)))
    assert r.value == 1.0


def test_strip_fraction_score():
    # |x1 - 0.5| >= 0.1 on 80% of the square
    r = score_Q(vertical_boundary(), uniform_ball_kernel(0.1), "indicator", ConstantOne(),
                RobustnessSpec(n_outer=100_000, seed=2))
    assert r.within(0.8, 3)


def test_identity_score_with_degenerate_kernel():
    f = DifferentiableModel.init([2, 8, 2], seed=0)
    r = score_Q(f, DegenerateKernel(), "identity", ConstantOne(), RobustnessSpec(n_outer=200, n_inner=5, dim=2))
    assert r.value == 1.0


def test_family_score_closed_form():
    # (1/sqrt2) * int_0^{1/2} (1 - 2e) de = 1 / (4 sqrt2)
    fam = family_uniform_epsilon(m=2)
    spec = RobustnessSpec(n_outer=100_000, eps_grid=np.linspace(0, math.sqrt(2), 401), seed=4)
    r = score_family(vertical_boundary(), fam, "indicator", ConstantOne(), spec)
    assert r.value == pytest.approx(0.25 / math.sqrt(2), abs=1e-2)
    via_margin = average_margin(vertical_boundary(), n=100_000, seed=5).value / math.sqrt(2)
    assert via_margin == pytest.approx(r.value, abs=1e-2)


def test_family_score_sampled_route():
    # the identity route integrates rho; for a far-off boundary it is 1
    fam = family_uniform_epsilon(0.2)
    f = LinearClassifier.from_hyperplane([1.0, 0.0], 5.0)
    spec = RobustnessSpec(n_outer=20, n_inner=50, eps_grid=np.linspace(0, 0.2, 5), dim=2)
    assert score_family(f, fam, "identity", ConstantOne(), spec).value == pytest.approx(1.0, abs=1e-12)


# margin curves


def test_margin_curve_examples():
    ds = dataset([[0.3, 0.1], [0.45, 0.6], [0.9, 0.2]])
    curve = margin_curve(vertical_boundary(), ds, [0.0, 0.1], analytic_linear_oracle())
    assert np.allclose(curve.margins, [0.2, 0.05, 0.4])
    assert curve.R[0] == 1.0
    assert curve.R[1] == pytest.approx(2 / 3)
    assert list(margin_curve(vertical_boundary(), ds, [0.0])) == [(0.0, 1.0)]


def test_constant_classifier_curve_and_area():
    ds = dataset([[0.3, 0.1], [0.6, 0.6]])
    grid = np.linspace(0, math.sqrt(2), 50)
    curve = margin_curve(ConstantClassifier(0), ds, grid)
    assert np.all(curve.R == 1.0)
    assert auc_margin_curve(curve) == pytest.approx(math.sqrt(2), abs=1e-12)


def test_area_is_mean_margin():
    ds = dataset([[0.3, 0.1], [0.45, 0.6], [0.9, 0.2]])
    grid = np.linspace(0, math.sqrt(2), 2001)
    curve = margin_curve(vertical_boundary(), ds, grid, analytic_linear_oracle())
    assert auc_margin_curve(curve) == pytest.approx(0.65 / 3, abs=2 * (grid[1] - grid[0]))


def test_single_point_curve_has_no_area():
    assert auc_margin_curve([(0.0, 1.0)]) == 0.0


@given(st.integers(0, 10_000))
def test_curves_start_at_one_and_decrease(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((3, 2))
    lin = LinearClassifier(w, rng.standard_normal(3) * 0.3)
    w = rng.random(25) + 0.01
    ds = dataset(rng.random((25, 2)), weights=w / w.sum())
    curve = margin_curve(lin, ds, np.linspace(0, 1.5, 40), analytic_linear_oracle())
    assert curve.R[0] == 1.0
    assert np.all(np.diff(curve.R) <= 1e-15)


def test_curve_excludes_failed_points():
    def flaky(f, X, metric):
        out = np.full(len(X), 0.3)
        out[0] = np.nan
        return out
    from robusta.robustness import MarginOracle
    curve = margin_curve(vertical_boundary(), dataset([[0.1, 0.1], [0.2, 0.2], [0.3, 0.3]]), [0, 0.2, 0.4],
                         MarginOracle("flaky", flaky))
    assert curve.n_failed == 1 and curve.n == 2
    assert list(curve.R) == [1.0, 1.0, 0.0]


def test_curve_csv_is_plain_numbers():
    curve = margin_curve(vertical_boundary(), dataset([[0.3, 0.1]]), [0.0, 0.1], analytic_linear_oracle())
    lines = curve.to_csv().splitlines()
    assert lines[0] == "epsilon,R,stderr,n"
    assert [float(v) for v in lines[2].split(",")] == [0.1, 1.0, 0.0, 1.0]


# average margin


def test_average_margin_uniform_square():
    est = average_margin(vertical_boundary(), n=100_000, seed=1)
    assert est.within(0.25, 3)


def test_average_margin_trivial_cases():
    assert average_margin(ConstantClassifier(0), dataset([[0.2, 0.2]])).value == pytest.approx(math.sqrt(2))
    assert average_margin(vertical_boundary(), dataset([[0.5, 0.1], [0.5, 0.9]])).value == 0.0


# oracles


def test_dense_sampling_finds_linear_margin():
    lin = LinearClassifier.from_hyperplane([1.0, 1.0], -1.0)
    X = np.array([[0.3, 0.3], [0.8, 0.7]])
    dense = dense_sampling_oracle(n_directions=2048, n_radii=64).margins(lin, X)
    exact = lin.margin(X)
    assert np.all(dense >= exact - 1e-9)
    assert np.allclose(dense, exact, atol=5e-3)


def test_min_oracle_takes_pointwise_minimum():
    from robusta.robustness import MarginOracle
    a = MarginOracle("a", lambda f, X, m: np.array([0.3, np.nan, np.nan]))
    b = MarginOracle("b", lambda f, X, m: np.array([0.2, 0.5, np.nan]))
    out = min_oracle(a, b).margins(None, np.zeros((3, 2)))
    assert out[0] == 0.2 and out[1] == 0.5 and np.isnan(out[2])
    assert min_oracle(a, b).kind == "min(a,b)"


# Prop 1


def test_prop1_bound_arithmetic():
    assert prop1_bound(0.9, 0.05, 0.02) == pytest.approx(0.83, abs=1e-15)
    with pytest.raises(ValueError):
        prop1_bound(1.2, 0, 0)


def test_prop1_equality_case():
    X = np.linspace(0.05, 0.95, 10)[:, None]
    labeler = Labeler(lambda Z: (Z[:, 0] > 0.7).astype(int))
    ds = LabeledDataset(X, labeler.predict(X))
    assert np.mean(ds.y == 0) == 0.7
    rep = prop1_verify(ConstantClassifier(0, 2), DegenerateKernel(), ds, labeler, RobustnessSpec(n_outer=50, n_inner=20))
    assert rep.alpha == pytest.approx(0.7, abs=1e-15)
    assert (rep.eps_hat, rep.delta_hat) == (0.0, 0.0)
    # accuracy under Q o P is sampled from P, so it matches 0.7 up to binomial error
    assert abs(rep.accuracy_under_QP - 0.7) <= 3 * rep.stderr
    assert rep.bound == rep.alpha and rep.holds_with_slack


def test_prop1_one_dimensional_pipeline():
    rng = np.random.default_rng(0)
    X = rng.random((300, 1))
    labeler = Labeler(lambda Z: (Z[:, 0] < 0.5).astype(int))
    f = LinearClassifier.from_hyperplane([1.0], -0.5)
    ds = LabeledDataset(X, labeler.predict(X))
    rep = prop1_verify(f, uniform_ball_kernel(0.1), ds, labeler, RobustnessSpec(n_outer=300, n_inner=100, seed=1))
    assert rep.alpha == 1.0
    assert rep.accuracy_under_QP == 1.0
    assert rep.eps_hat == pytest.approx(0.05, abs=0.02)
    assert rep.holds_with_slack


def test_spec_validation():
    with pytest.raises(ValueError):
        RobustnessSpec(n_inner=0)
    with pytest.raises(ValueError):
        RobustnessSpec(eps_grid=[0.1, 0.05])
    assert RobustnessSpec(H="indicator").H is H.INDICATOR
