import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog, minimize

from mldmpc.miqp.qp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_qp


def dual_projected_gradient(H, f, A, b, iters=20000):
    """Reference solver for strictly convex QPs: accelerated projected gradient on the dual."""
    Hinv = np.linalg.inv(H)
    G = A @ Hinv @ A.T
    L = max(np.linalg.eigvalsh(G).max(), 1e-12)
    lam = np.zeros(A.shape[0])
    y, t = lam.copy(), 1.0
    for _ in range(iters):
        x = -Hinv @ (f + A.T @ y)
        lam_new = np.maximum(0.0, y + (A @ x - b) / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = lam_new + (t - 1) / t_new * (lam_new - lam)
        lam, t = lam_new, t_new
    x = -Hinv @ (f + A.T @ lam)
    return x


def random_instance(rng, d, pd=True):
    M = rng.normal(size=(d, d if pd else max(1, d - 2)))
    H = M @ M.T + (0.1 * np.eye(d) if pd else 0.0)
    f = rng.normal(size=d) * 2
    r = int(rng.integers(1, 3 * d))
    A = rng.normal(size=(r, d))
    xh = rng.uniform(-1, 1, d)
    b = A @ xh + rng.uniform(0, 1, r)
    box = np.vstack([np.eye(d), -np.eye(d)])
    return H, f, np.vstack([A, box]), np.concatenate([b, np.full(2 * d, 3.0)])


def test_projection_onto_halfline():
    sol = solve_qp([[1.0]], [0.0], [[-1.0]], [-1.0])
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(1.0)
    assert sol.obj == pytest.approx(0.5)


def test_clamped_minimum_of_relaxed_binary():
    # min 0.5 (u - 1.5)^2 with u = d, d in [0, 1]; variables (u, d)
    H = np.diag([1.0, 0.0])
    f = np.array([-1.5, 0.0])
    A = np.array([[1.0, -1.0], [-1.0, 1.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([0.0, 0.0, 1.0, 0.0])
    sol = solve_qp(H, f, A, b)
    assert sol.ok
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-9)
    assert sol.obj + 0.5 * 1.5 ** 2 == pytest.approx(0.125)


def test_infeasible_rows():
    sol = solve_qp(np.eye(2), np.zeros(2), [[1.0, 1.0], [-1.0, -1.0]], [-1.0, -1.0])
    assert sol.status == INFEASIBLE


def test_zero_row_with_negative_rhs_is_infeasible():
    assert solve_qp(np.eye(1), [0.0], [[0.0]], [-1.0]).status == INFEASIBLE


def test_unbounded_linear_program():
    sol = solve_qp(np.zeros((1, 1)), [-1.0], [[-1.0]], [0.0])
    assert sol.status == UNBOUNDED


def test_equality_pair_is_respected():
    A = np.array([[1.0, 1.0], [-1.0, -1.0]])
    sol = solve_qp(np.eye(2), np.zeros(2), A, [1.0, -1.0])
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-10)


@pytest.mark.parametrize("seed", range(40))
def test_matches_dual_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 7))
    H, f, A, b = random_instance(rng, d)
    sol = solve_qp(H, f, A, b)
    assert sol.ok
    xr = dual_projected_gradient(H, f, A, b)
    Jr = 0.5 * xr @ H @ xr + f @ xr
    assert sol.obj == pytest.approx(Jr, abs=1e-6)
    assert np.max(A @ sol.x - b) <= 1e-8


@pytest.mark.parametrize("seed", range(20))
def test_linear_program_matches_highs(seed):
    rng = np.random.default_rng(100 + seed)
    d = int(rng.integers(1, 6))
    _, f, A, b = random_instance(rng, d)
    sol = solve_qp(np.zeros((d, d)), f, A, b)
    ref = linprog(f, A_ub=A, b_ub=b, bounds=[(None, None)] * d, method="highs")
    assert sol.ok and ref.status == 0
    assert sol.obj == pytest.approx(ref.fun, abs=1e-7)


@pytest.mark.parametrize("seed", range(20))
def test_semidefinite_hessian(seed):
    rng = np.random.default_rng(200 + seed)
    d = int(rng.integers(2, 7))
    H, f, A, b = random_instance(rng, d, pd=False)
    sol = solve_qp(H, f, A, b)
    assert sol.ok
    ref = minimize(
        lambda x: 0.5 * x @ H @ x + f @ x,
        np.zeros(d),
        jac=lambda x: H @ x + f,
        constraints=[{"type": "ineq", "fun": lambda x: b - A @ x, "jac": lambda x: -A}],
        method="SLSQP",
        options={"ftol": 1e-12, "maxiter": 1000},
    )
    assert np.max(A @ ref.x - b) <= 1e-8
    assert sol.obj == pytest.approx(ref.fun, abs=1e-6)


@pytest.mark.parametrize("seed", range(15))
def test_warm_start_gives_same_answer(seed):
    rng = np.random.default_rng(300 + seed)
    H, f, A, b = random_instance(rng, 4)
    cold = solve_qp(H, f, A, b)
    warm = solve_qp(H, f, A, b, x0=cold.x + 0.3, working=cold.working)
    assert warm.obj == pytest.approx(cold.obj, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3))
def test_box_projection_property(c, r):
    # min 0.5||x - c||^2 over the box [-r, r]^3 is the clipped point
    c = np.array(c)
    A = np.vstack([np.eye(3), -np.eye(3)])
    sol = solve_qp(np.eye(3), -c, A, np.full(6, r))
    np.testing.assert_allclose(sol.x, np.clip(c, -r, r), atol=1e-9)
