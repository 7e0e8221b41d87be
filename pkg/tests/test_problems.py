import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shuffling_sgd import (
    BiasMlpArchitecture,
    ContractViolation,
    build_bias_mlp,
    build_interpolating_generator,
    build_least_squares,
    build_teacher_mlp,
    eval_objective,
    finite_diff_grad,
    grad_component,
    problem_from_dict,
)


@pytest.fixture
def two_point():
    # f(w; i) = 0.5 (w - c_i)^2 with c = [0, 2]
    return build_least_squares([[1.0], [1.0]], [0.0, 2.0])


def test_two_point_objective(two_point):
    assert eval_objective(two_point, [1.0]) == 0.5
    assert eval_objective(two_point, [0.0]) == 1.0


def test_two_point_truth(two_point):
    t = two_point.truth
    assert t.w_star[0] == pytest.approx(1.0, abs=1e-15)
    assert t.f_star == pytest.approx(0.5)
    assert t.sigma_star_sq == pytest.approx(1.0)
    assert t.smoothness == 1.0
    assert t.lower_bound_gap() == pytest.approx(0.5)


def test_one_based_indices(two_point):
    np.testing.assert_array_equal(grad_component(two_point, [1.0], 1), [1.0])
    np.testing.assert_array_equal(grad_component(two_point, [1.0], 2), [-1.0])
    for bad in (0, 3, 1.5):
        with pytest.raises(ContractViolation):
            grad_component(two_point, [1.0], bad)


def test_dimension_mismatch(two_point):
    with pytest.raises(ContractViolation):
        eval_objective(two_point, [1.0, 2.0])


def test_single_component_objective():
    p = build_least_squares([[2.0, -1.0]], [3.0])
    w = np.array([0.5, 0.25])
    assert eval_objective(p, w) == p.component_value(w, 0)


@pytest.mark.parametrize("rows,targets", [
    ([[0.0, 0.0], [1.0, 2.0]], [1.0, 2.0]),
    ([[1.0, np.nan]], [1.0]),
    ([[1.0, 2.0]], [1.0, 2.0]),
])
def test_least_squares_rejects_bad_input(rows, targets):
    with pytest.raises(ContractViolation):
        build_least_squares(rows, targets)


def test_interpolating_generator_properties():
    p = build_interpolating_generator(20, 50, 3, radius=2.0)
    w = p.truth.w_star
    assert np.linalg.norm(w) == pytest.approx(2.0)
    assert p.objective(w) < 1e-28
    assert np.sum(p.full_grad(w) ** 2) <= 1e-18 * p.d
    np.testing.assert_allclose(p.row_sq, 1.0)
    # minimum norm minimizer: lstsq of the same system recovers it
    w_ls, *_ = np.linalg.lstsq(p.A, p.b, rcond=None)
    np.testing.assert_allclose(w_ls, w, atol=1e-12)


def test_interpolating_generator_needs_overparameterization():
    with pytest.raises(ContractViolation):
        build_interpolating_generator(10, 5, 0)


def test_interpolating_is_reproducible():
    a = build_interpolating_generator(8, 12, 42)
    b = build_interpolating_generator(8, 12, 42)
    np.testing.assert_array_equal(a.A, b.A)
    np.testing.assert_array_equal(a.b, b.b)


def test_least_squares_batched_matches_componentwise():
    rng = np.random.default_rng(0)
    p = build_least_squares(rng.standard_normal((7, 4)), rng.standard_normal(7))
    w = rng.standard_normal(4)
    G = p.grads(w)
    for k in range(p.n):
        np.testing.assert_allclose(G[k], p.component_grad(w, k), rtol=1e-14)
        assert p.values(w)[k] == pytest.approx(p.component_value(w, k), rel=1e-14)
    np.testing.assert_allclose(p.grad_sq_norms(w), np.sum(G * G, axis=1), rtol=1e-13)
    F, g2 = p.point_stats(w)
    assert F == pytest.approx(p.objective(w), rel=1e-14)
    assert g2 == pytest.approx(np.mean(np.sum(G * G, axis=1)), rel=1e-13)


def test_nonnegative_and_loss_bound():
    # F* >= mean f_i* for every least squares problem
    rng = np.random.default_rng(1)
    for _ in range(5):
        p = build_least_squares(rng.standard_normal((6, 3)), rng.standard_normal(6))
        assert p.truth.lower_bound_gap() >= 0


# ---------------------------------------------------------------------------
# bias MLP
# ---------------------------------------------------------------------------


def small_mlp(activation="tanh", hidden=(5, 4), out=2, n=6, seed=0):
    return build_teacher_mlp(BiasMlpArchitecture(3, hidden, out, activation), n, seed)


def test_architecture_validation():
    with pytest.raises(ContractViolation):
        BiasMlpArchitecture(3, (0,), 1)
    with pytest.raises(ContractViolation):
        BiasMlpArchitecture(3, (4,), 1, "softplus")
    arch = BiasMlpArchitecture(3, (4,), 2)
    assert arch.n_params == 3 * 4 + 4 + 4 * 2 + 2


@pytest.mark.parametrize("activation", ["tanh", "sigmoid", "relu"])
def test_last_entries_are_output_bias(activation):
    # d f / d b_out equals the residual h(w; i) - y_i
    p = small_mlp(activation)
    w = p.initial_point() + 0.4
    for k in range(p.n):
        resid = p.predict(w, p.X[k:k + 1])[0] - p.Y[k]
        np.testing.assert_allclose(p.component_grad(w, k)[-2:], resid, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_mlp_gradient_matches_finite_differences(activation):
    p = small_mlp(activation)
    rng = np.random.default_rng(3)
    for _ in range(5):
        w = p.initial_point() + 0.5 * rng.standard_normal(p.d)
        i = int(rng.integers(1, p.n + 1))
        g = grad_component(p, w, i)
        fd = finite_diff_grad(p, w, i)
        assert np.linalg.norm(g - fd) <= 1e-7 * max(1.0, np.linalg.norm(g))


def test_mlp_batched_matches_componentwise():
    p = small_mlp()
    w = p.initial_point() - 0.2
    G = p.grads(w)
    for k in range(p.n):
        np.testing.assert_allclose(G[k], p.component_grad(w, k), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(p.grad_sq_norms(w), np.sum(G * G, axis=1), rtol=1e-12)
    np.testing.assert_allclose(p.full_grad(w), G.mean(axis=0), rtol=1e-12, atol=1e-15)


def test_teacher_weights_interpolate():
    p = small_mlp(n=10)
    assert p.objective(p.truth.w_star) == 0.0


def test_no_hidden_layer_is_linear_regression():
    X = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.array([1.0, -1.0])
    p = build_bias_mlp(BiasMlpArchitecture(2, (), 1), X, y)
    w = np.array([0.5, 0.25, 0.1])  # W (2x1) then bias
    pred = X @ w[:2] + w[2]
    assert p.objective(w) == pytest.approx(0.25 * np.sum((pred - y) ** 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_mlp_losses_nonnegative(seed, scale):
    p = small_mlp(seed=seed % 7)
    w = scale * np.random.default_rng(seed).standard_normal(p.d)
    assert np.all(p.values(w) >= 0)


def test_problem_from_dict_round_trip():
    docs = [
        {"kind": "least_squares", "rows": [[1.0, 2.0], [0.5, -1.0]], "targets": [1.0, 0.0]},
        {"kind": "interpolating", "n": 5, "d": 9, "seed": 2, "radius": 1.5},
        {"kind": "bias_mlp", "architecture": {"input_dim": 2, "hidden": [3], "output_dim": 1}, "n": 4, "seed": 1},
    ]
    for doc in docs:
        p = problem_from_dict(doc)
        q = problem_from_dict(p.to_dict())
        w = p.initial_point() + 0.3
        assert p.objective(w) == q.objective(w)
    with pytest.raises(ContractViolation):
        problem_from_dict({"kind": "nope"})
