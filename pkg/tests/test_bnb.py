import json

import numpy as np
import pytest

from mldmpc.cli import random_suite
from mldmpc.miqp import (
    FIRST_FEASIBLE,
    INFEASIBLE_STATUS,
    NODE_LIMIT,
    OPTIMAL_STATUS,
    MiqpProblem,
    SolverOpts,
    TooManyBinaries,
    brute_force,
    solve,
)


def u_equals_delta():
    # variables (u, d): min 0.5 (u - 1.5)^2 s.t. u = d, d binary
    return MiqpProblem(
        H=np.diag([1.0, 0.0]),
        f=np.array([-1.5, 0.0]),
        Phi=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        phi=np.zeros(2),
        binary=(1,),
    )


def test_u_equals_delta():
    sol = solve(u_equals_delta())
    assert sol.status == OPTIMAL_STATUS
    np.testing.assert_allclose(sol.U, [1.0, 1.0], atol=1e-9)
    assert sol.J + 0.5 * 1.5 ** 2 == pytest.approx(0.125)


def test_u_equals_delta_enumeration_values():
    p = u_equals_delta()
    const = 0.5 * 1.5 ** 2
    for d, want in ((0.0, 1.125), (1.0, 0.125)):
        assert p.objective([d, d]) + const == pytest.approx(want)


def test_brute_force_matches_on_toy():
    a, b = solve(u_equals_delta()), brute_force(u_equals_delta())
    assert a.status == b.status and a.J == pytest.approx(b.J)


def test_contradictory_binaries():
    p = MiqpProblem(np.zeros((2, 2)), np.zeros(2), [[-1.0, -1.0], [1.0, 1.0]], [-1.0, 0.0], (0, 1))
    assert solve(p).status == INFEASIBLE_STATUS
    assert brute_force(p).status == INFEASIBLE_STATUS


def test_brute_force_without_binaries_is_one_qp():
    p = MiqpProblem(np.eye(1), [0.0], [[-1.0]], [-1.0])
    sol = brute_force(p)
    assert sol.stats.qp_solves == 1
    assert sol.U[0] == pytest.approx(1.0)


def test_brute_force_guard():
    p = MiqpProblem(np.zeros((21, 21)), np.zeros(21), np.zeros((0, 21)), np.zeros(0), tuple(range(21)))
    with pytest.raises(TooManyBinaries):
        brute_force(p)


@pytest.mark.parametrize("seed", range(3))
def test_random_suite_matches_brute_force(seed):
    for p in random_suite(seed, 25):
        a, b = solve(p), brute_force(p)
        assert a.status == b.status
        if b.U is not None:
            assert a.J == pytest.approx(b.J, abs=1e-6)
            viol, integ = p.residuals(a.U)
            assert viol <= 1e-7 and integ <= 1e-6


def test_first_feasible_returns_valid_point():
    for p in random_suite(7, 30):
        ref = brute_force(p)
        ff = solve(p, SolverOpts(mode="first_feasible"))
        assert (ff.status == FIRST_FEASIBLE) == (ref.status == OPTIMAL_STATUS)
        if ff.U is not None:
            viol, integ = p.residuals(ff.U)
            assert viol <= 1e-7 and integ <= 1e-6


def test_bound_monotone_along_paths():
    for p in random_suite(11, 20):
        sol = solve(p, SolverOpts(record_tree=True))
        bound = {node: J for node, _, J in sol.stats.tree}
        for node, parent, J in sol.stats.tree:
            if parent in bound:
                assert J >= bound[parent] - 1e-8


def test_deterministic_repeat():
    for p in random_suite(5, 10):
        a, b = solve(p), solve(p)
        if a.U is not None:
            assert a.U.tobytes() == b.U.tobytes()


def test_node_limit():
    p = random_suite(3, 50)
    hit = [solve(q, SolverOpts(node_limit=1)).status for q in p]
    assert NODE_LIMIT in hit


def test_branching_rules_agree():
    for p in random_suite(13, 15):
        a = solve(p, SolverOpts(branching="first_index"))
        b = solve(p)
        assert a.status == b.status
        if a.U is not None:
            assert a.J == pytest.approx(b.J, abs=1e-6)


def test_json_round_trip(tmp_path):
    p = random_suite(1, 1)[0]
    path = tmp_path / "p.json"
    p.save(path)
    q = MiqpProblem.load(path)
    for k in ("H", "f", "Phi", "phi", "lb", "ub"):
        np.testing.assert_array_equal(getattr(p, k), getattr(q, k))
    assert p.binary == q.binary
    assert set(json.loads(path.read_text())) == {"H", "f", "Phi", "phi", "binary", "bounds"}


def test_validate_flags_indefinite_hessian():
    p = MiqpProblem(-np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0), (5,))
    errs = p.validate()
    assert any("semidefinite" in e for e in errs)
    assert any("out of range" in e for e in errs)


def test_invalid_options():
    with pytest.raises(ValueError):
        SolverOpts(mode="fast")
    with pytest.raises(ValueError):
        SolverOpts(int_tol=0.0)
