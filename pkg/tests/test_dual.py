import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import finite_difference
from shield.dual import (DualObjective, DualPoint, DualSolveError, dual_gradient, dual_value, gap,
                         primal_radius, project_dual, projected_gradient, solve_dual_exact,
                         solve_reduced_unconstrained)
from shield.instances import d1, d2, random_program, t0
from shield.problem import RegularizedProgram
from shield.solver import solve


def point(obj, **blocks):
    y = DualPoint.zeros(obj.sizes)
    for k, v in blocks.items():
        setattr(y, k, np.asarray(v, dtype=float))
    return y


def test_t0_values():
    obj = DualObjective(t0())
    assert dual_value(obj, point(obj)) == 0.0
    assert dual_value(obj, point(obj, g=[1.0, 0.0])) == pytest.approx(0.5)
    np.testing.assert_allclose(dual_gradient(obj, point(obj)), 0.0)
    np.testing.assert_allclose(projected_gradient(obj, point(obj)), 0.0)


def test_d2_strong_duality_at_hand_optimum():
    obj = DualObjective(d2())
    y = point(obj, mu=[1.5], g=[1.0])
    assert dual_value(obj, y) == pytest.approx(0.875, abs=1e-12)  # primal optimum is -0.875


def test_d1_gradient_matches_finite_difference():
    obj = DualObjective(d1())
    y0 = np.zeros(obj.dim)
    fd = finite_difference(lambda y: dual_value(obj, y), y0)
    np.testing.assert_allclose(dual_gradient(obj, y0), fd, atol=1e-6)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_difference(seed):
    pr = random_program(seed, max_n=8, max_screen=6)
    obj = DualObjective(pr)
    y = np.random.default_rng(seed).standard_normal(obj.dim)
    fd = finite_difference(lambda v: dual_value(obj, v), y)
    g = dual_gradient(obj, y)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))


@given(st.integers(0, 10_000))
def test_mu_gradient_is_negative_constraint_value(seed):
    pr = random_program(seed, max_n=8, max_screen=6)
    obj = DualObjective(pr)
    y = np.random.default_rng(seed).standard_normal(obj.dim)
    theta = obj.theta_hat(y)
    c = pr.n_screenable
    expected = -(pr.screenable.A @ theta - (pr.screenable.b - pr.zeta))
    np.testing.assert_allclose(dual_gradient(obj, y)[:c], expected, atol=1e-9)


def test_projection_examples():
    y = project_dual(np.array([-1.0, 2.0, 3.0]), (2, 0, 0, 1), 1.0)
    assert y.mu.tolist() == [0.0, 2.0] and y.g.tolist() == [1.0]
    feasible = np.array([0.5, 0.0, -0.3])
    np.testing.assert_array_equal(project_dual(feasible, (2, 0, 0, 1), 1.0).stack(), feasible)


@given(st.integers(0, 10_000))
def test_projection_nonexpansive_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(k) for k in rng.integers(0, 4, size=4))
    d = sum(sizes)
    a, b = rng.standard_normal(d) * 3, rng.standard_normal(d) * 3
    pa, pb = project_dual(a, sizes, 0.7).stack(), project_dual(b, sizes, 0.7).stack()
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-12
    np.testing.assert_array_equal(project_dual(pa, sizes, 0.7).stack(), pa)


def test_d2_projected_gradient_at_zero_mu():
    obj = DualObjective(d2())
    # theta_hat = 2, so the mu gradient is -(2 - 0.5) and the g gradient is -2 (clipped away)
    np.testing.assert_allclose(projected_gradient(obj, point(obj, g=[1.0])), [-1.5, 0.0])


def test_projected_gradient_rejects_infeasible_point():
    obj = DualObjective(d2())
    with pytest.raises(ValueError):
        projected_gradient(obj, point(obj, mu=[-1.0]))


def test_dimension_mismatch_raises():
    obj = DualObjective(d2())
    with pytest.raises(ValueError):
        dual_value(obj, np.zeros(5))
    with pytest.raises(ValueError):
        dual_value(obj, DualPoint([0.0, 0.0], [], [], [0.0]))


def test_exact_duals_of_named_instances():
    assert np.all(solve_dual_exact(DualObjective(t0())).stack() == 0.0)
    y1 = solve_dual_exact(DualObjective(d1()))
    assert y1.mu[0] == pytest.approx(0.0, abs=1e-9) and y1.g[0] == pytest.approx(1.0, abs=1e-9)
    y2 = solve_dual_exact(DualObjective(d2()))
    assert y2.mu[0] == pytest.approx(1.5, abs=1e-9) and y2.g[0] == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(projected_gradient(DualObjective(d2()), y2)) <= 1e-8


def test_exact_dual_iteration_cap_raises():
    pr = random_program(3, n=6, full_rank_dual=True)
    obj = DualObjective(pr)
    with pytest.raises(DualSolveError) as info:
        solve_dual_exact(obj, tol=-1.0, max_iter=2)
    assert info.value.residual >= 0


def test_gap_identity_hessian():
    # Q = I and orthonormal dual directions give rho_bar = rho_underbar = 1
    pr = RegularizedProgram.build(np.eye(2), [-3.0, 1.0], A_s=[[1.0, 0.0]], b_s=[1.0],
                                  S=[[0.0, 1.0]], lam=0.5, zeta=0.5, epsilon=0.1)
    obj = DualObjective(pr)
    assert obj.rho_bar == pytest.approx(1.0) and obj.rho_underbar == pytest.approx(1.0)
    y = point(obj, mu=[0.3], g=[0.1])
    assert gap(obj, y) == pytest.approx(2 * np.linalg.norm(projected_gradient(obj, y)))


def test_gap_infinite_when_dual_rank_deficient():
    obj = DualObjective(d2())  # theta <= 0.5 and |theta| share the same direction
    assert not obj.strongly_convex
    assert gap(obj, point(obj, mu=[1.5], g=[1.0])) == np.inf


@given(st.integers(0, 10_000))
def test_gap_bounds_distance_to_optimum(seed):
    rng = np.random.default_rng(seed)
    pr = random_program(rng, max_n=12, full_rank_dual=True)
    obj = DualObjective(pr)
    y_star = solve_dual_exact(obj)
    assert gap(obj, y_star) <= 1e-7
    y = project_dual(rng.standard_normal(obj.dim) * rng.uniform(0.1, 5.0), obj.sizes, pr.lam)
    assert np.linalg.norm(y.stack() - y_star.stack()) <= gap(obj, y) + 1e-8


@given(st.integers(0, 10_000))
def test_weak_and_strong_duality(seed):
    rng = np.random.default_rng(seed)
    pr = random_program(rng, max_n=10, max_screen=12)
    obj = DualObjective(pr)
    sol = solve(pr)
    y_star = solve_dual_exact(obj)
    assert abs(sol.objective + dual_value(obj, y_star)) <= 1e-6
    y = project_dual(rng.standard_normal(obj.dim), obj.sizes, pr.lam)
    assert sol.objective + dual_value(obj, y) >= -1e-8


@given(st.integers(0, 10_000))
def test_primal_radius_contains_optimum(seed):
    rng = np.random.default_rng(seed)
    pr = random_program(rng, max_n=10, max_screen=12)
    obj = DualObjective(pr)
    sol = solve(pr)
    y = project_dual(rng.standard_normal(obj.dim), obj.sizes, pr.lam)
    # the tightened optimum itself is a valid feasible point for the bound
    r = primal_radius(obj, y, sol.theta)
    diff = sol.theta - obj.theta_hat(y)
    assert np.sqrt(diff @ pr.Q @ diff) <= r + 1e-7


def test_reduced_solve_t0_all_free():
    red = solve_reduced_unconstrained(DualObjective(t0()), keep_mu=[])
    np.testing.assert_allclose(red.point.g, 0.0)
    assert not red.singular


def test_reduced_solve_d2_pinned():
    obj = DualObjective(d2())
    red = solve_reduced_unconstrained(obj, keep_mu=[0], pinned_g=[0])
    assert red.point.mu[0] == pytest.approx(1.5) and red.point.g[0] == 1.0


def test_reduced_solve_pin_sign_ties_go_positive():
    obj = DualObjective(t0())
    red = solve_reduced_unconstrained(obj, keep_mu=[], pinned_g=[0, 1])
    np.testing.assert_array_equal(red.point.g, [1.0, 1.0])


def test_reduced_solve_misclassified_point_is_caught():
    obj = DualObjective(d2())
    red = solve_reduced_unconstrained(obj, keep_mu=[])
    y = project_dual(red.point, obj.sizes, obj.lam)
    assert y.is_feasible(obj.lam)
    assert np.linalg.norm(projected_gradient(obj, y)) > 0
    assert gap(obj, y) > 0


def test_reduced_solve_singular_system_flagged():
    # two identical screenable rows make the reduced Hessian singular
    pr = RegularizedProgram.build(np.eye(1), [-3.0], A_s=[[1.0], [1.0]], b_s=[1.0, 1.0])
    red = solve_reduced_unconstrained(DualObjective(pr), keep_mu=[0, 1])
    assert red.singular
    assert np.all(np.isfinite(red.point.stack()))
