import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entsg import entropic_ot as eot
from entsg.errors import EpsilonNonPositive, NotConverged
from entsg.exact_ot import w2_squared_exact
from entsg.measures import BallSpec, new_discrete, quantize_uniform_ball, support_radius

from oracles import (central_gradient, central_jacobian, random_feasible_plan,
                     two_by_two_entropic_plan)


def random_pair(rng, n, m, d, radius=1.0):
    a = new_discrete(rng.uniform(-radius, radius, (n, d)) / np.sqrt(d), rng.dirichlet(np.ones(n)))
    b = new_discrete(rng.uniform(-radius, radius, (m, d)) / np.sqrt(d), rng.dirichlet(np.ones(m)))
    return a, b


def test_dirac_dirac_one_sweep():
    a = new_discrete([[0.0, 0.0, 0.0]], [1.0])
    b = new_discrete([[1.0, 0.0, 0.0]], [1.0])
    sol = eot.sinkhorn_solve(a, b, 0.3)
    assert sol.iterations == 1
    assert sol.marginal_error == 0.0
    assert np.allclose(eot.plan(sol), [[1.0]], atol=0, rtol=1e-15)
    assert eot.ot_eps_value(sol) == pytest.approx(0.5, abs=1e-15)
    assert eot.dual_value(sol) == pytest.approx(0.5, abs=1e-15)


def test_two_by_two_matches_grid_search():
    m = new_discrete([[0.0], [1.0]], [0.5, 0.5])
    sol = eot.sinkhorn_solve(m, m, 0.5, tol=1e-12)
    expected = two_by_two_entropic_plan(gap_sq=1.0, eps=0.5)
    assert np.abs(eot.plan(sol) - expected).max() <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_marginals_within_tol(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 17, 23, 2)
    sol = eot.sinkhorn_solve(a, b, 0.1, tol=1e-10)
    p = eot.plan(sol)
    assert np.abs(p.sum(1) - a.weights).max() <= 1e-10
    assert np.abs(p.sum(0) - b.weights).max() <= 1e-10
    assert sol.marginal_error <= 1e-10
    assert abs(p.sum() - 1.0) <= 1e-9
    assert abs(np.dot(b.weights, sol.u)) <= 1e-12 * (1 + np.abs(sol.u).max())


def test_epsilon_must_be_positive():
    m = new_discrete([[0.0]], [1.0])
    with pytest.raises(EpsilonNonPositive):
        eot.sinkhorn_solve(m, m, 0.0)
    with pytest.raises(EpsilonNonPositive):
        eot.sinkhorn_solve(m, m, -1.0)


def test_not_converged_carries_diagnostics():
    rng = np.random.default_rng(0)
    a, b = random_pair(rng, 20, 20, 2)
    with pytest.raises(NotConverged) as info:
        eot.sinkhorn_solve(a, b, 0.01, tol=1e-12, max_iter=3)
    assert info.value.iterations == 3
    assert info.value.marginal_error > 1e-12
    assert info.value.solution is not None


def test_warm_start_reaches_same_solution_faster():
    rng = np.random.default_rng(4)
    a, b = random_pair(rng, 30, 30, 3)
    cold = eot.sinkhorn_solve(a, b, 0.05)
    moved = new_discrete(a.points + 1e-3, a.weights)
    warm = eot.sinkhorn_solve(moved, b, 0.05, init_u=cold.u)
    again = eot.sinkhorn_solve(moved, b, 0.05)
    assert warm.iterations < again.iterations
    assert np.abs(eot.plan(warm) - eot.plan(again)).max() < 1e-8


def test_threads_do_not_change_bits():
    rng = np.random.default_rng(9)
    a, b = random_pair(rng, 700, 300, 3)
    s1 = eot.sinkhorn_solve(a, b, 0.2, threads=1)
    s4 = eot.sinkhorn_solve(a, b, 0.2, threads=4)
    assert np.array_equal(s1.u, s4.u) and np.array_equal(s1.v, s4.v)
    assert s1.iterations == s4.iterations


# --- values -------------------------------------------------------------------

def test_large_eps_approaches_product_plan():
    m = new_discrete([[0.0], [1.0]], [0.5, 0.5])
    sol = eot.sinkhorn_solve(m, m, 1e3)
    prod = np.outer(m.weights, m.weights)
    product_value = eot.primal_objective(prod, m, m, 1e3)
    assert eot.ot_eps_value(sol) == pytest.approx(product_value, rel=1e-3)


@pytest.mark.parametrize("seed", range(4))
def test_value_sandwich(seed):
    rng = np.random.default_rng(100 + seed)
    a, b = random_pair(rng, 4, 4, 2)
    sol = eot.sinkhorn_solve(a, b, 0.01, max_iter=200_000)
    w2sq, _ = w2_squared_exact(a, b)
    prod = np.outer(a.weights, b.weights)
    val = eot.ot_eps_value(sol)
    assert 0.5 * w2sq <= val <= eot.primal_objective(prod, a, b, 0.01)


@pytest.mark.parametrize("seed", range(4))
def test_gibbs_plan_beats_random_feasible_plans(seed):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 6, 5, 2)
    sol = eot.sinkhorn_solve(a, b, 0.2, tol=1e-12)
    best = eot.ot_eps_value(sol)
    for _ in range(20):
        p = random_feasible_plan(a.weights, b.weights, rng)
        assert eot.primal_objective(p, a, b, 0.2) >= best - 1e-10


def test_relative_entropy_conventions():
    assert eot.relative_entropy([0.5, 0.5, 0.0], [0.25, 0.25, 0.5]) == pytest.approx(np.log(2))
    assert eot.relative_entropy([0.5, 0.5], [1.0, 0.0]) == np.inf


@pytest.mark.parametrize("seed", range(6))
def test_duality_gap_bound(seed):
    rng = np.random.default_rng(200 + seed)
    a, b = random_pair(rng, 8, 8, 3)
    tol = 1e-9
    sol = eot.sinkhorn_solve(a, b, 0.1, tol=tol)
    pts = np.vstack([a.points, b.points])
    diam = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1).max())
    assert abs(eot.ot_eps_value(sol) - eot.dual_value(sol)) <= 10 * tol * (1 + diam ** 2)


def test_weak_duality_after_one_sweep():
    rng = np.random.default_rng(3)
    a, b = random_pair(rng, 8, 8, 3)
    rough = eot.sinkhorn_sweeps(a, b, 0.05, 1)
    exact = eot.sinkhorn_solve(a, b, 0.05)
    assert eot.dual_value(rough) <= eot.ot_eps_value(exact) + 1e-12


# --- queries -------------------------------------------------------------------

def test_conditional_single_atom_mu():
    a = new_discrete([[0.0, 0.0], [1.0, 1.0]], [0.5, 0.5])
    b = new_discrete([[0.3, -0.2]], [1.0])
    sol = eot.sinkhorn_solve(a, b, 0.1)
    for x in ([0.0, 0.0], [5.0, -3.0]):
        assert np.array_equal(eot.conditional_plan(sol, x), [1.0])
        assert np.allclose(eot.barycentric(sol, x), [0.3, -0.2], atol=0)
        assert np.allclose(eot.grad_v(sol, x), np.array(x) - [0.3, -0.2], atol=1e-15)
        assert np.array_equal(eot.hess_v(sol, x), np.eye(2))


def test_conditional_large_eps_close_to_mu():
    rng = np.random.default_rng(1)
    a = quantize_uniform_ball(BallSpec(1.0, 3), 10, seed=1)
    b = new_discrete(quantize_uniform_ball(BallSpec(1.0, 3), 12, seed=2).points,
                     rng.dirichlet(np.ones(12)))
    sol = eot.sinkhorn_solve(a, b, 1e3)
    for x in quantize_uniform_ball(BallSpec(1.0, 3), 20, seed=3).points:
        tv = 0.5 * np.abs(eot.conditional_plan(sol, x) - b.weights).sum()
        assert tv <= 1e-3


def test_symmetric_two_atom_mu():
    b = new_discrete([[-1.0], [1.0]], [0.5, 0.5])
    a = new_discrete([[0.0]], [1.0])
    sol = eot.sinkhorn_solve(a, b, 0.3)
    assert np.allclose(eot.conditional_plan(sol, [0.0]), [0.5, 0.5], atol=1e-12)
    assert abs(eot.barycentric(sol, [0.0])[0]) <= 1e-12


@pytest.mark.parametrize("a_half,eps", [(1.0, 0.3), (0.5, 0.1), (2.0, 1.5)])
def test_hessian_closed_form(a_half, eps):
    # weights are (1/2, 1/2) by symmetry, so Var = a^2
    b = new_discrete([[-a_half], [a_half]], [0.5, 0.5])
    alpha = new_discrete([[-0.4], [0.4]], [0.5, 0.5])
    sol = eot.sinkhorn_solve(alpha, b, eps, tol=1e-12)
    assert eot.hess_v(sol, [0.0])[0, 0] == pytest.approx(1 - a_half ** 2 / eps, abs=1e-9)


def test_barycentre_in_convex_hull():
    from scipy.optimize import linprog
    rng = np.random.default_rng(5)
    a, b = random_pair(rng, 10, 6, 2)
    sol = eot.sinkhorn_solve(a, b, 0.05)
    for x in rng.normal(scale=3.0, size=(10, 2)):
        bc = eot.barycentric(sol, x)
        # feasibility of bc = sum lambda_j y_j, lambda in the simplex
        res = linprog(np.zeros(b.n), A_eq=np.vstack([b.points.T, np.ones(b.n)]),
                      b_eq=np.append(bc, 1.0), bounds=[(0, None)] * b.n)
        assert res.status == 0


def test_linear_growth_of_gradient():
    rng = np.random.default_rng(6)
    b = quantize_uniform_ball(BallSpec(1.5, 3), 15, seed=6)
    a = quantize_uniform_ball(BallSpec(1.5, 3), 15, seed=7)
    sol = eot.sinkhorn_solve(a, b, 0.1)
    xs = rng.normal(scale=4.0, size=(100, 3))
    g = np.linalg.norm(eot.grad_v(sol, xs), axis=1)
    assert np.all(g <= np.linalg.norm(xs, axis=1) + 1.5 + 1e-12)


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.02])
def test_gradient_matches_finite_differences(eps):
    rng = np.random.default_rng(int(eps * 100))
    a, b = random_pair(rng, 12, 9, 3)
    sol = eot.sinkhorn_solve(a, b, eps)
    for x in rng.uniform(-1.2, 1.2, size=(10, 3)):
        fd = central_gradient(lambda z: eot.potential_v(sol, z), x, 1e-5)
        g = eot.grad_v(sol, x)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.02])
def test_hessian_matches_finite_differences(eps):
    rng = np.random.default_rng(int(eps * 1000))
    a, b = random_pair(rng, 12, 9, 3)
    sol = eot.sinkhorn_solve(a, b, eps)
    for x in rng.uniform(-1.2, 1.2, size=(10, 3)):
        fd = central_jacobian(lambda z: eot.grad_v(sol, z), x, 1e-5)
        h = eot.hess_v(sol, x)
        assert np.array_equal(h, h.T)
        assert np.abs(fd - h).max() <= 1e-4 * max(1.0, np.abs(h).max())


def test_potential_extension_agrees_on_atoms():
    rng = np.random.default_rng(8)
    a, b = random_pair(rng, 9, 7, 2)
    sol = eot.sinkhorn_solve(a, b, 0.2, tol=1e-12)
    # v on alpha's atoms is the fixed point of the extension formula
    assert np.allclose(eot.potential_v(sol, a.points), sol.v, atol=1e-10)
    assert np.allclose(eot.potential_u(sol, b.points), sol.u, atol=1e-10)


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.03])
def test_hessian_norm_bound(eps):
    rng = np.random.default_rng(12)
    b = quantize_uniform_ball(BallSpec(1.0, 3), 20, seed=12)
    a = quantize_uniform_ball(BallSpec(1.0, 3), 20, seed=13)
    sol = eot.sinkhorn_solve(a, b, eps, max_iter=200_000)
    r0 = support_radius(b)
    for h in eot.hess_v(sol, rng.normal(scale=2.0, size=(50, 3))):
        assert np.linalg.norm(h, 2) <= 1 + 2 * r0 ** 2 / eps


def test_eps_gap_monotone_and_small():
    rng = np.random.default_rng(21)
    a = new_discrete(rng.uniform(-1, 1, (10, 2)), np.full(10, 0.1))
    b = new_discrete(rng.uniform(-1, 1, (10, 2)), np.full(10, 0.1))
    w2sq, _ = w2_squared_exact(a, b)
    pts = np.vstack([a.points, b.points])
    diam_sq = ((pts[:, None] - pts[None]) ** 2).sum(-1).max()
    gaps = []
    for eps in (1, 0.3, 0.1, 0.03, 0.02):
        sol = eot.sinkhorn_solve(a, b, eps, tol=1e-7, max_iter=500_000)
        gaps.append(eot.ot_eps_value(sol) - 0.5 * w2sq)
    assert all(g >= 0 for g in gaps)
    assert all(y < x for x, y in zip(gaps, gaps[1:]))
    # OT_eps - W2^2/2 approaches eps * H(permutation plan) = eps * log(n)
    assert gaps[-1] <= 0.02 * np.log(10) + 1e-3 * diam_sq


# --- properties ----------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50), st.sampled_from([1.0, 0.3, 0.1]))
def test_gauge_invariance(seed, shift, eps):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, 6, 7, 2)
    sol = eot.sinkhorn_solve(a, b, eps)
    moved = eot.SchrodingerSolution(sol.epsilon, sol.u + shift, sol.v - shift,
                                    a, b, sol.marginal_error, sol.iterations)
    xs = rng.normal(size=(5, 2))
    assert np.allclose(eot.plan(moved), eot.plan(sol), rtol=1e-9, atol=1e-15)
    assert np.allclose(eot.conditional_plan(moved, xs), eot.conditional_plan(sol, xs), atol=1e-12)
    assert np.allclose(eot.barycentric(moved, xs), eot.barycentric(sol, xs), atol=1e-12)
    assert np.allclose(eot.grad_v(moved, xs), eot.grad_v(sol, xs), atol=1e-12)
    assert np.allclose(eot.hess_v(moved, xs), eot.hess_v(sol, xs), atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10), st.integers(1, 10),
       st.integers(1, 3), st.sampled_from([1.0, 0.5, 0.1]))
def test_feasibility_property(seed, n, m, d, eps):
    rng = np.random.default_rng(seed)
    a, b = random_pair(rng, n, m, d)
    sol = eot.sinkhorn_solve(a, b, eps, tol=1e-10, max_iter=200_000)
    p = eot.plan(sol)
    assert np.all(p >= 0)
    assert np.abs(p.sum(1) - a.weights).max() <= 1e-10
    assert np.abs(p.sum(0) - b.weights).max() <= 1e-10
    w = eot.conditional_plan(sol, rng.normal(size=(4, d)))
    assert np.all(w >= 0) and np.allclose(w.sum(1), 1.0, atol=1e-12)
