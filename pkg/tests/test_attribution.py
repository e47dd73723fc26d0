import numpy as np
import pytest

from procfair.attribution import (
    Explanation,
    ExplanationSet,
    ShapConfig,
    exact_shapley,
    explain_set,
    kernel_shap,
    read_explanations_csv,
    sample_background,
    write_explanations_csv,
)
from procfair.models import init_mlp, predict_proba


def linear_fn(w, b=0.0):
    w = np.asarray(w, dtype=float)
    return lambda X: np.atleast_2d(X) @ w + b


def mlp_fn(model):
    return lambda X: predict_proba(model, X)


# ---------------------------------------------------------------------------
# kernel SHAP


def test_linear_model_exact_attribution():
    rng = np.random.default_rng(0)
    w = np.array([1.5, -2.0, 0.3, 0.7])
    bg = rng.normal(size=(50, 4))
    x = rng.normal(size=4)
    result = kernel_shap(linear_fn(w, b=0.4), x, ShapConfig(bg, seed=1))
    np.testing.assert_allclose(result.values, w * (x - bg.mean(axis=0)), atol=1e-10)


def test_linear_model_exact_with_sampled_coalitions():
    rng = np.random.default_rng(1)
    d = 12  # 2^d - 2 exceeds the budget, forcing coalition sampling
    w = rng.normal(size=d)
    bg = rng.normal(size=(20, d))
    x = rng.normal(size=d)
    result = kernel_shap(linear_fn(w), x, ShapConfig(bg, n_coalitions=600, seed=2))
    np.testing.assert_allclose(result.values, w * (x - bg.mean(axis=0)), atol=1e-8)


def test_constant_model_all_zero():
    bg = np.random.default_rng(2).normal(size=(10, 3))
    result = kernel_shap(lambda X: np.full(len(np.atleast_2d(X)), 0.7), np.ones(3), ShapConfig(bg))
    np.testing.assert_allclose(result.values, 0.0, atol=1e-12)
    assert result.base_value == pytest.approx(0.7)


def test_kernel_shap_matches_exact_oracle_on_mlps():
    rng = np.random.default_rng(3)
    for trial, d in ((0, 4), (1, 4), (2, 6)):  # full enumeration in both cases
        model = init_mlp(d, 8, seed=trial)
        bg = rng.normal(size=(25, d))
        x = rng.normal(size=d)
        approx = kernel_shap(mlp_fn(model), x, ShapConfig(bg, seed=trial))
        exact = exact_shapley(mlp_fn(model), x, bg)
        np.testing.assert_allclose(approx.values, exact.values, atol=1e-6)
        assert approx.base_value == pytest.approx(exact.base_value, abs=1e-12)


def test_local_accuracy_enforced():
    rng = np.random.default_rng(4)
    model = init_mlp(5, 6, seed=9)
    bg = rng.normal(size=(15, 5))
    for _ in range(5):
        x = rng.normal(size=5)
        result = kernel_shap(mlp_fn(model), x, ShapConfig(bg, seed=0))
        assert abs(result.base_value + result.values.sum() - result.target) <= 1e-6


def test_null_feature_gets_no_credit():
    rng = np.random.default_rng(5)
    w = np.array([2.0, 0.0, -1.0])  # second feature ignored
    bg = rng.normal(size=(30, 3))
    x = rng.normal(size=3)
    exact = exact_shapley(linear_fn(w), x, bg)
    assert abs(exact.values[1]) <= 1e-8

    w_wide = np.zeros(10)
    w_wide[0], w_wide[9] = 2.0, -1.0  # middle features ignored
    bg_wide = rng.normal(size=(20, 10))
    x_wide = rng.normal(size=10)
    sampled = kernel_shap(linear_fn(w_wide), x_wide, ShapConfig(bg_wide, n_coalitions=500, seed=6))
    assert np.abs(sampled.values[1:9]).max() <= 0.01 * np.abs(sampled.values).max()


def test_single_feature_edge_case():
    bg = np.array([[0.0], [2.0]])
    result = kernel_shap(linear_fn([3.0]), np.array([1.0]), ShapConfig(bg))
    assert result.values[0] == pytest.approx(3.0 * (1.0 - 1.0))
    result2 = kernel_shap(linear_fn([3.0]), np.array([2.0]), ShapConfig(bg))
    assert result2.values[0] == pytest.approx(3.0)


def test_coalition_budget_below_d_rejected():
    bg = np.zeros((3, 5))
    with pytest.raises(ValueError, match="n_coalitions"):
        kernel_shap(linear_fn(np.ones(5)), np.ones(5), ShapConfig(bg, n_coalitions=4))


# ---------------------------------------------------------------------------
# exact Shapley oracle


def test_exact_shapley_hand_case():
    # f(x) = x1 * x2 at x = (1, 1) against background {(0, 0)}:
    # v(empty)=0, v({1})=0, v({2})=0, v(full)=1 -> phi = (1/2, 1/2)
    def product(X):
        X = np.atleast_2d(X)
        return X[:, 0] * X[:, 1]

    result = exact_shapley(product, np.array([1.0, 1.0]), np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(result.values, [0.5, 0.5], atol=1e-12)
    assert result.base_value == pytest.approx(0.0)
    assert result.target == pytest.approx(1.0)


def test_exact_shapley_symmetry_axiom():
    def symmetric(X):
        X = np.atleast_2d(X)
        return X[:, 0] + X[:, 1]

    bg = np.array([[0.3, 0.3], [-0.3, -0.3]])
    result = exact_shapley(symmetric, np.array([1.2, 1.2]), bg)
    assert result.values[0] == pytest.approx(result.values[1], abs=1e-12)


def test_exact_shapley_efficiency_axiom():
    rng = np.random.default_rng(6)
    model = init_mlp(3, 4, seed=2)
    bg = rng.normal(size=(12, 3))
    x = rng.normal(size=3)
    result = exact_shapley(mlp_fn(model), x, bg)
    assert result.base_value + result.values.sum() == pytest.approx(result.target, abs=1e-12)


def test_exact_shapley_dimension_guard():
    with pytest.raises(ValueError, match="d <= 15"):
        exact_shapley(lambda X: np.zeros(len(np.atleast_2d(X))), np.zeros(16), np.zeros((1, 16)))


# ---------------------------------------------------------------------------
# explain_set


def test_duplicate_rows_identical_explanations():
    rng = np.random.default_rng(7)
    model = init_mlp(4, 6, seed=3)
    bg = rng.normal(size=(20, 4))
    row = rng.normal(size=4)
    X = np.vstack([row, rng.normal(size=4), row])
    result = explain_set(mlp_fn(model), X, ShapConfig(bg, seed=4))
    np.testing.assert_array_equal(result.values[0], result.values[2])


def test_explain_set_single_row():
    bg = np.random.default_rng(8).normal(size=(10, 2))
    result = explain_set(linear_fn([1.0, -1.0]), np.array([[0.5, 0.5]]), ShapConfig(bg))
    assert result.n == 1 and result.d == 2


def test_explain_set_deterministic():
    rng = np.random.default_rng(9)
    model = init_mlp(4, 5, seed=5)
    bg = rng.normal(size=(15, 4))
    X = rng.normal(size=(6, 4))
    a = explain_set(mlp_fn(model), X, ShapConfig(bg, seed=11))
    b = explain_set(mlp_fn(model), X, ShapConfig(bg, seed=11))
    np.testing.assert_array_equal(a.values, b.values)


def test_explain_set_row_accessor_and_names():
    bg = np.zeros((4, 2))
    result = explain_set(linear_fn([1.0, 2.0]), np.ones((3, 2)), ShapConfig(bg), ("u", "v"))
    assert result.feature_names == ("u", "v")
    row = result.row(1)
    assert isinstance(row, Explanation)
    assert row.base_value + row.values.sum() == pytest.approx(row.target, abs=1e-9)


def test_explain_set_local_accuracy_all_rows():
    rng = np.random.default_rng(10)
    model = init_mlp(4, 8, seed=6)
    bg = rng.normal(size=(30, 4))
    X = rng.normal(size=(25, 4))
    result = explain_set(mlp_fn(model), X, ShapConfig(bg, seed=1))
    reconstructed = result.base_values + result.values.sum(axis=1)
    np.testing.assert_allclose(reconstructed, result.targets, atol=1e-6)


def test_background_dimension_mismatch():
    bg = np.zeros((5, 3))
    with pytest.raises(ValueError, match="dimensionality"):
        explain_set(linear_fn([1.0, 1.0]), np.ones((2, 2)), ShapConfig(bg))


# ---------------------------------------------------------------------------
# background sampling and CSV interchange


def test_sample_background_deterministic_and_capped():
    X = np.arange(40.0).reshape(20, 2)
    a = sample_background(X, size=8, seed=3)
    b = sample_background(X, size=8, seed=3)
    np.testing.assert_array_equal(a, b)
    assert sample_background(X, size=100, seed=0).shape == (20, 2)


def test_explanations_csv_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    model = init_mlp(3, 4, seed=8)
    bg = rng.normal(size=(10, 3))
    X = rng.normal(size=(7, 3))
    original = explain_set(mlp_fn(model), X, ShapConfig(bg, seed=2), ("a", "b", "c"))
    path = tmp_path / "explanations.csv"
    write_explanations_csv(original, path)
    loaded = read_explanations_csv(path)
    assert loaded.feature_names == original.feature_names
    np.testing.assert_array_equal(loaded.values, original.values)
    np.testing.assert_array_equal(loaded.targets, original.targets)


def test_explanation_set_validation():
    with pytest.raises(ValueError):
        ExplanationSet(np.ones((2, 2)), np.ones(3), np.ones(2), ("a", "b"))
    with pytest.raises(ValueError):
        ExplanationSet(np.ones((2, 2)), np.ones(2), np.ones(2), ("a",))
