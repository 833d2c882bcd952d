import json
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg

from mldmpc.mld import Infeasible, aux_problem, step, validate
from mldmpc.miqp import MiqpProblem, SolverOpts, solve
from mldmpc.mpc import LYAP_FEASIBLE, LYAP_OPTIMAL, TERMINAL, Controller, ControllerSpec
from mldmpc.suspension import (
    X0,
    ExperimentConfig,
    SuspensionParams,
    build_continuous,
    build_mld,
    compare_variants,
    direct_feasible,
    discretize,
    make_certificate,
    origin_is_equilibrium,
    params_from_json,
    params_to_json,
    reference_damping_loop,
    run_benchmark,
    settling_time,
    terminal_scan,
)

P = SuspensionParams()


@pytest.fixture(scope="module")
def model():
    return build_mld(P)


def test_continuous_structure():
    A, B = build_continuous(P)
    np.testing.assert_array_equal(B[:, 0], [0.0, 10.0, 0.0, -1.0])
    np.testing.assert_array_equal(A[2], [0.0, -1.0, 0.0, 1.0])
    # zeta = 0 removes every damping term
    assert A[1, 1] == A[1, 3] == A[3, 1] == A[3, 3] == 0.0
    assert A[1, 0] == pytest.approx(-(2 * math.pi * 9.0) ** 2)
    assert A[1, 2] == pytest.approx(10 * (2 * math.pi * 1.5) ** 2)
    assert A[3, 2] == pytest.approx(-(2 * math.pi * 1.5) ** 2)


def test_continuous_switches():
    A, _ = build_continuous(SuspensionParams(zeta=0.3, a24_damped=False, omega21="s", hz_to_rad=False))
    assert A[1, 3] == pytest.approx(2 * 10 * 1.5)
    assert A[1, 0] == pytest.approx(-1.5 ** 2)
    assert A[1, 1] == pytest.approx(-2 * 10 * 0.3 * 1.5)


def test_params_validation():
    for bad in (dict(Ts=0.0), dict(sigma=-1.0), dict(zeta=3.0), dict(omega21="x"), dict(f_s=0.0)):
        with pytest.raises(ValueError):
            SuspensionParams(**bad)


def test_discretize_double_integrator():
    Ad, Bd = discretize([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], 0.1)
    np.testing.assert_allclose(Ad, [[1.0, 0.1], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(Bd[:, 0], [0.005, 0.1], atol=1e-15)


def test_discretize_zero_matrix():
    Ad, Bd = discretize(np.zeros((2, 2)), [[1.0], [2.0]], 0.3)
    np.testing.assert_array_equal(Ad, np.eye(2))
    np.testing.assert_allclose(Bd[:, 0], [0.3, 0.6], atol=1e-16)


def test_discretize_rejects_bad_ts():
    with pytest.raises(ValueError):
        discretize(np.eye(1), [[1.0]], 0.0)


def fine_euler(A, B, Ts, k):
    h = Ts / k
    M = np.eye(A.shape[0]) + h * A
    X, G = np.eye(A.shape[0]), np.zeros_like(B)
    for _ in range(k):
        G = M @ G + h * B
        X = M @ X
    return X, G


def test_discretize_matches_fine_euler():
    A, B = build_continuous(P)
    Ad, Bd = discretize(A, B, P.Ts)
    X1, G1 = fine_euler(A, B, P.Ts, 10_000)
    X2, G2 = fine_euler(A, B, P.Ts, 20_000)
    # one Richardson step removes the first-order Euler error
    np.testing.assert_allclose(2 * X2 - X1, Ad, atol=1e-6, rtol=0)
    np.testing.assert_allclose(2 * G2 - G1, Bd, atol=1e-6, rtol=0)


def test_discretize_block_exponential():
    A, B = build_continuous(P)
    Ad, Bd = discretize(A, B, P.Ts)
    # Bd is the integral of exp(A s) B over one sample
    s = np.linspace(0.0, P.Ts, 2001)
    vals = np.stack([scipy.linalg.expm(A * t) @ B for t in s])
    np.testing.assert_allclose(Bd, scipy.integrate.simpson(vals, x=s, axis=0), atol=1e-10, rtol=0)
    np.testing.assert_allclose(Ad, scipy.linalg.expm(A * P.Ts), atol=1e-12, rtol=0)


def test_build_mld_validates(model):
    assert validate(model) == []
    assert model.dims.r_l == 2 and model.dims.r_c == 3
    assert model.dims.q_e == 27
    assert origin_is_equilibrium(model)


def feasible_for_delta(model, x, f, d):
    base = aux_problem(model, np.asarray(x, dtype=float), np.array([f]))
    lb, ub = base.lb.copy(), base.ub.copy()
    lb[:2], ub[:2] = d, d
    p = MiqpProblem(base.H, base.f, base.Phi, base.phi, base.binary, lb, ub)
    return solve(p, SolverOpts(mode="first_feasible")).feasible


def test_wrong_sign_force_is_infeasible(model):
    x = [0.0, 0.0, 0.0, 0.1]
    for d in ((0, 0), (0, 1), (1, 0), (1, 1)):
        assert not feasible_for_delta(model, x, -0.1, d)
    with pytest.raises(Infeasible):
        step(model, x, [-0.1])


def test_damping_bound_point(model):
    x = [0.0, 0.0, 0.0, 0.1]
    assert 0.1 * 0.1 <= P.c_max * 0.1 ** 2
    assert direct_feasible(P, x, 0.1)
    step(model, x, [0.1])


def test_saturation(model):
    with pytest.raises(Infeasible):
        step(model, [0.0, 0.0, 0.0, 0.1], [0.25])
    assert not direct_feasible(P, [0.0, 0.0, 0.0, 0.1], 0.25)


def mld_feasible(model, x, f):
    try:
        step(model, x, [f])
        return True
    except Infeasible:
        return False


def test_encoding_matches_direct_constraints(model):
    rng = np.random.default_rng(7)
    mism = []
    for i in range(1000):
        x = rng.uniform(-1, 1, 4)
        # concentrate relative velocity near the switching surface
        x[3] = x[1] + rng.choice([rng.uniform(-1e-2, 1e-2), rng.uniform(-0.5, 0.5)])
        f = rng.uniform(-0.25, 0.25)
        if i % 10 == 0:
            f = P.c_max * (x[3] - x[1]) * rng.uniform(0.9, 1.1)
        if mld_feasible(model, x, f) != direct_feasible(P, x, f):
            mism.append((x, f))
    assert not mism


def test_zero_relative_velocity_forces_zero_force(model):
    # with v = 0 the piecewise force pins fbar = 0, although the raw inequalities allow fbar in [0, sigma]
    x = [0.0, 0.3, 0.0, 0.3]
    assert direct_feasible(P, x, 0.1)
    assert not mld_feasible(model, x, 0.1)
    assert mld_feasible(model, x, 0.0)


def test_state_box_rows(model):
    assert not mld_feasible(model, [11.0, 0.0, 0.0, 0.0], 0.0)


def test_zero_initial_state_gives_zero_log(tmp_path, model):
    cfg = ExperimentConfig(variant=LYAP_OPTIMAL, x0=(0, 0, 0, 0), T=4)
    res = run_benchmark(cfg, tmp_path, model=model)
    assert res.log.completed
    assert np.abs(res.log.x).max() <= 1e-12 and np.abs(res.log.u).max() <= 1e-12
    for name in ("trajectory.csv", "control.csv", "times.csv", "log.csv", "summary.json", "plot.gp"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["steps"] == 4 and summary["settling_time"] == 0


def test_terminal_short_horizon_infeasible(model):
    spec = ControllerSpec(TERMINAL, 5, Q1=1.0, Q4=np.eye(4))
    with pytest.raises(Infeasible):
        Controller(spec, model).step(np.array(X0))


def test_scan_reports_diagnostic(model):
    scan = terminal_scan(P, N_max=3, model=model)
    assert scan.N_star is None
    assert scan.feasible == {1: False, 2: False, 3: False}
    msg = scan.diagnostic()
    assert "no feasible horizon" in msg and "rho=10.0" in msg


def test_compare_identical_configs(model):
    cfg = ExperimentConfig(variant=LYAP_FEASIBLE, x0=(0, 0, 0, 0), T=3)
    rows = compare_variants([cfg, cfg], results=[run_benchmark(cfg, model=model) for _ in range(2)])
    timing = {"median_ms", "max_ms"}
    assert {k: v for k, v in rows[0].items() if k not in timing} == {
        k: v for k, v in rows[1].items() if k not in timing}
    with pytest.raises(ValueError):
        compare_variants([cfg])


def test_settling_time_rule():
    class Log:
        pass

    log = Log()
    log.x = np.array([[1.0], [1e-4], [2e-3], [5e-4], [1e-4]])
    assert settling_time(log) == 3
    log.x = np.array([[1.0], [1.0]])
    assert settling_time(log) is None


def test_reference_loop_is_stable(model):
    c, Acl = reference_damping_loop(model, P)
    assert 0 < c <= P.c_max
    assert max(abs(np.linalg.eigvals(Acl))) < 1
    # without damping the sampled plant sits on the unit circle
    assert max(abs(np.linalg.eigvals(model.A))) == pytest.approx(1.0, abs=1e-9)


def test_identity_certificate(model):
    cert = make_certificate(ExperimentConfig(), model)
    assert cert.is_identity and cert.gamma == pytest.approx(0.01)
    assert cert.theta == pytest.approx(0.99)


def test_file_certificate(tmp_path, model):
    path = tmp_path / "y.json"
    path.write_text(json.dumps({"Y": np.eye(4).tolist(), "gamma": 0.2}))
    cert = make_certificate(ExperimentConfig(y_source="file", y_file=str(path)), model)
    assert cert.gamma == 0.2


def test_params_json_round_trip():
    p = SuspensionParams(zeta=0.1, omega21="s")
    assert params_from_json(params_to_json(p)) == p
    assert params_from_json(None) == SuspensionParams()


def test_experiment_config_checks():
    with pytest.raises(ValueError):
        ExperimentConfig(x0=(0, 0, np.inf, 0))
    with pytest.raises(ValueError):
        ExperimentConfig(y_source="magic")
