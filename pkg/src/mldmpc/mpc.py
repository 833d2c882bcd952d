"""Condensed hybrid MPC over an MLD model.

The decision vector stacks the whole horizon as

    U = [u_0 .. u_{N-1}, delta_0 .. delta_{N-1}, z_0 .. z_{N-1}]

and every step reduces to the MIQP

    min 0.5 U'HU + (F'x_t + f0)'U   s.t.   Phi U <= phi0 + phiX x_t (+ decrease rows)

Three variants share the construction: a terminal equality x_N = x_e, an
optimizing controller with the infinity-norm decrease constraint on the first
move, and the same constraint solved as a pure feasibility problem.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lyapunov
from .lyapunov import LyapunovCertificate
from .miqp import MiqpProblem, SolverOpts, solve
from .mld import Infeasible, MldModel, propagate

TERMINAL = "terminal-equality"
LYAP_OPTIMAL = "lyapunov-optimal"
LYAP_FEASIBLE = "lyapunov-feasible"
VARIANTS = (TERMINAL, LYAP_OPTIMAL, LYAP_FEASIBLE)
ALIASES = {"terminal": TERMINAL, "optimal": LYAP_OPTIMAL, "feasible": LYAP_FEASIBLE}
TERMINAL_SLACK = 1e-7


class StepFailed(RuntimeError):
    def __init__(self, msg, status, stats=None):
        super().__init__(msg)
        self.status = status
        self.stats = stats


def _weight(Q, size, name) -> np.ndarray:
    if Q is None:
        return np.zeros((size, size))
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 0:
        Q = float(Q) * np.eye(size)
    elif Q.ndim == 1:
        Q = np.diag(Q)
    if Q.shape != (size, size):
        raise ValueError(f"{name} has shape {Q.shape}, expected {(size, size)}")
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    if size and np.linalg.eigvalsh(Q).min() < -1e-10:
        raise ValueError(f"{name} is not positive semidefinite")
    return Q


def _vec(v, size, name) -> np.ndarray:
    if v is None:
        return np.zeros(size)
    v = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
    if v.size != size:
        raise ValueError(f"{name} has length {v.size}, expected {size}")
    return v


@dataclass
class ControllerSpec:
    variant: str
    N: int
    Q1: object = None
    Q2: object = None
    Q3: object = None
    Q4: object = None
    Q5: object = None
    x_e: object = None
    u_e: object = None
    delta_e: object = None
    z_e: object = None
    y_e: object = None
    certificate: LyapunovCertificate | None = None
    solver: SolverOpts | None = None
    terminal_slack: float = TERMINAL_SLACK

    def __post_init__(self):
        self.variant = ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("horizon N must be a positive integer")
        self.N = int(self.N)
        if self.variant != TERMINAL and self.certificate is None:
            raise ValueError(f"{self.variant} needs a Lyapunov certificate")

    @property
    def lyapunov(self) -> bool:
        return self.variant != TERMINAL

    def solver_opts(self) -> SolverOpts:
        if self.solver is not None:
            return self.solver
        mode = "first_feasible" if self.variant == LYAP_FEASIBLE else "optimal"
        return SolverOpts(mode=mode)

    def resolve(self, model: MldModel) -> dict:
        d = model.dims
        return {
            "Q1": _weight(self.Q1, d.m, "Q1"),
            "Q2": _weight(self.Q2, d.r_l, "Q2"),
            "Q3": _weight(self.Q3, d.r_c, "Q3"),
            "Q4": _weight(self.Q4, d.n, "Q4"),
            "Q5": _weight(self.Q5, d.p, "Q5"),
            "u_e": _vec(self.u_e, d.m, "u_e"),
            "delta_e": _vec(self.delta_e, d.r_l, "delta_e"),
            "z_e": _vec(self.z_e, d.r_c, "z_e"),
            "x_e": _vec(self.x_e, d.n, "x_e"),
            "y_e": _vec(self.y_e, d.p, "y_e"),
        }

    def to_json(self) -> dict:
        def enc(v):
            return None if v is None else np.asarray(v, dtype=float).tolist()

        s = self.solver_opts()
        return {
            "variant": self.variant,
            "N": self.N,
            **{k: enc(getattr(self, k)) for k in ("Q1", "Q2", "Q3", "Q4", "Q5")},
            "equilibrium": {k: enc(getattr(self, k)) for k in ("x_e", "u_e", "delta_e", "z_e", "y_e")},
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "solver": {k: getattr(s, k) for k in ("mode", "int_tol", "gap", "node_limit", "node_selection",
                                                   "branching", "qp_tol", "deterministic")},
        }

    @classmethod
    def from_json(cls, data: dict) -> "ControllerSpec":
        eq = data.get("equilibrium") or {}
        cert = data.get("certificate")
        solver = data.get("solver")
        return cls(
            variant=data["variant"],
            N=data["N"],
            **{k: data.get(k) for k in ("Q1", "Q2", "Q3", "Q4", "Q5")},
            **{k: eq.get(k) for k in ("x_e", "u_e", "delta_e", "z_e", "y_e")},
            certificate=None if cert is None else LyapunovCertificate.from_json(cert),
            solver=None if solver is None else SolverOpts(**solver),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ControllerSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- condensing


@dataclass
class Prediction:
    """Affine maps from (x_t, U) to predicted trajectories.

    Sx[k], Su[k] give x_{t+k|t} = Sx[k] x_t + Su[k] U for k = 0..N.
    Ox[k], Ou[k] give y_{t+k|t} for k = 0..N-1. Pu, Pd, Pz select u_k, delta_k, z_k.
    """

    N: int
    Sx: np.ndarray
    Su: np.ndarray
    Ox: np.ndarray
    Ou: np.ndarray
    Pu: np.ndarray
    Pd: np.ndarray
    Pz: np.ndarray

    @property
    def states(self):
        """Stacked maps for x_{t+1|t} .. x_{t+N|t}."""
        return np.vstack(self.Sx[1:]), np.vstack(self.Su[1:])

    def simulate(self, x, U) -> tuple[np.ndarray, np.ndarray]:
        X = np.einsum("kij,j->ki", self.Sx, x) + np.einsum("kij,j->ki", self.Su, U)
        Y = np.einsum("kij,j->ki", self.Ox, x) + np.einsum("kij,j->ki", self.Ou, U)
        return X, Y


def build_prediction(model: MldModel, N: int) -> Prediction:
    n, m, rl, rc, p = model.n, model.m, model.dims.r_l, model.dims.r_c, model.p
    d = N * (m + rl + rc)
    Pu = np.zeros((N, m, d))
    Pd = np.zeros((N, rl, d))
    Pz = np.zeros((N, rc, d))
    for k in range(N):
        Pu[k, :, k * m:(k + 1) * m] = np.eye(m)
        Pd[k, :, N * m + k * rl:N * m + (k + 1) * rl] = np.eye(rl)
        Pz[k, :, N * (m + rl) + k * rc:N * (m + rl) + (k + 1) * rc] = np.eye(rc)
    Sx = np.zeros((N + 1, n, n))
    Su = np.zeros((N + 1, n, d))
    Sx[0] = np.eye(n)
    for k in range(N):
        Sx[k + 1] = model.A @ Sx[k]
        Su[k + 1] = model.A @ Su[k] + model.B1 @ Pu[k] + model.B2 @ Pd[k] + model.B3 @ Pz[k]
    Ox = np.einsum("ij,kjl->kil", model.C, Sx[:N]) if N else np.zeros((0, p, n))
    Ou = (np.einsum("ij,kjl->kil", model.C, Su[:N]) + np.einsum("ij,kjl->kil", model.D1, Pu)
          + np.einsum("ij,kjl->kil", model.D2, Pd) + np.einsum("ij,kjl->kil", model.D3, Pz))
    return Prediction(N, Sx, Su, Ox, Ou, Pu, Pd, Pz)


@dataclass
class CostMaps:
    """J(U, x) = 0.5 U'HU + (F'x + f0)'U + x'Kxx x + kx'x + k0."""

    H: np.ndarray
    F: np.ndarray
    f0: np.ndarray
    Kxx: np.ndarray
    kx: np.ndarray
    k0: float

    def constant(self, x) -> float:
        return float(x @ self.Kxx @ x + self.kx @ x + self.k0)

    def gradient(self, x) -> np.ndarray:
        return self.F.T @ x + self.f0

    def value(self, U, x) -> float:
        return float(0.5 * U @ self.H @ U + self.gradient(x) @ U) + self.constant(x)


def stage_cost(spec: ControllerSpec, model: MldModel, x, U, pred: Prediction | None = None) -> float:
    """Direct sum of the five weighted squares over k = 0..N-1."""
    w = spec.resolve(model)
    pred = pred or build_prediction(model, spec.N)
    X, Y = pred.simulate(np.asarray(x, dtype=float), np.asarray(U, dtype=float))
    J = 0.0
    for k in range(spec.N):
        for P, Q, target in ((pred.Pu[k], w["Q1"], w["u_e"]), (pred.Pd[k], w["Q2"], w["delta_e"]),
                             (pred.Pz[k], w["Q3"], w["z_e"])):
            e = P @ U - target
            J += e @ Q @ e
        e = X[k] - w["x_e"]
        J += e @ w["Q4"] @ e
        e = Y[k] - w["y_e"]
        J += e @ w["Q5"] @ e
    return float(J)


def build_cost(spec: ControllerSpec, model: MldModel, N: int | None = None,
               pred: Prediction | None = None) -> CostMaps:
    N = spec.N if N is None else N
    pred = pred or build_prediction(model, N)
    w = spec.resolve(model)
    n = model.n
    d = pred.Su.shape[2]
    H = np.zeros((d, d))
    F = np.zeros((n, d))
    f0 = np.zeros(d)
    Kxx = np.zeros((n, n))
    kx = np.zeros(n)
    k0 = 0.0
    # each term is ||M U + Nx x + c||^2_Q
    terms = []
    for k in range(N):
        terms.append((pred.Pu[k], np.zeros((model.m, n)), -w["u_e"], w["Q1"]))
        terms.append((pred.Pd[k], np.zeros((model.dims.r_l, n)), -w["delta_e"], w["Q2"]))
        terms.append((pred.Pz[k], np.zeros((model.dims.r_c, n)), -w["z_e"], w["Q3"]))
        terms.append((pred.Su[k], pred.Sx[k], -w["x_e"], w["Q4"]))
        terms.append((pred.Ou[k], pred.Ox[k], -w["y_e"], w["Q5"]))
    for M, Nx, c, Q in terms:
        if not np.any(Q):
            continue
        QM = Q @ M
        H += 2.0 * M.T @ QM
        F += 2.0 * Nx.T @ QM
        f0 += 2.0 * c @ QM
        Kxx += Nx.T @ Q @ Nx
        kx += 2.0 * c @ Q @ Nx
        k0 += float(c @ Q @ c)
    H = 0.5 * (H + H.T)
    return CostMaps(H, F, f0, Kxx, kx, k0)


@dataclass
class CondensedMiqp:
    """Phi U <= phi0 + phiX x, plus first-move decrease rows for Lyapunov variants."""

    H: np.ndarray
    F: np.ndarray
    f0: np.ndarray
    Phi: np.ndarray
    phi0: np.ndarray
    phiX: np.ndarray
    binary: tuple
    eq_rows: tuple = ()
    cert: LyapunovCertificate | None = None
    lyap_G: np.ndarray | None = None
    lyap_cols: np.ndarray | None = None
    model: MldModel | None = field(default=None, repr=False)
    cost: CostMaps | None = field(default=None, repr=False)

    def rows_at(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        Phi, phi = self.Phi, self.phi0 + self.phiX @ x
        if self.cert is not None:
            dec = lyapunov.decrease_rows(self.cert, self.model, x)
            G = np.zeros((dec.G.shape[0], Phi.shape[1]))
            G[:, self.lyap_cols] = dec.G
            Phi, phi = np.vstack([Phi, G]), np.concatenate([phi, dec.h])
        return Phi, phi

    def problem(self, x, with_cost: bool = True) -> MiqpProblem:
        Phi, phi = self.rows_at(x)
        d = self.H.shape[0]
        if with_cost:
            H, f = self.H, self.F.T @ np.asarray(x, dtype=float) + self.f0
        else:
            H, f = np.zeros((d, d)), np.zeros(d)
        return MiqpProblem(H, f, Phi, phi, self.binary)


def attach_constraints(spec: ControllerSpec, model: MldModel, N: int | None = None, x_t=None,
                       cert: LyapunovCertificate | None = None, pred: Prediction | None = None,
                       cost: CostMaps | None = None) -> CondensedMiqp:
    """Assemble the horizon's rows; x_t only matters through rows_at/problem."""
    N = spec.N if N is None else N
    pred = pred or build_prediction(model, N)
    cost = cost or build_cost(spec, model, N, pred)
    cert = cert or spec.certificate
    n, m, rl = model.n, model.m, model.dims.r_l
    rows, rhs0, rhsX = [], [], []
    for k in range(N):
        # E2 d_k + E3 z_k - E1 u_k - E4 x_k <= E5
        rows.append(model.E2 @ pred.Pd[k] + model.E3 @ pred.Pz[k] - model.E1 @ pred.Pu[k] - model.E4 @ pred.Su[k])
        rhs0.append(model.E5)
        rhsX.append(model.E4 @ pred.Sx[k])
    eq_rows = ()
    if spec.variant == TERMINAL:
        x_e = spec.resolve(model)["x_e"]
        s = spec.terminal_slack
        start = sum(r.shape[0] for r in rows)
        rows += [pred.Su[N], -pred.Su[N]]
        rhs0 += [x_e + s, -x_e + s]
        rhsX += [-pred.Sx[N], pred.Sx[N]]
        eq_rows = tuple(range(start, start + 2 * n))
    d = pred.Su.shape[2]
    Phi = np.vstack(rows) if rows else np.zeros((0, d))
    phi0 = np.concatenate(rhs0) if rhs0 else np.zeros(0)
    phiX = np.vstack(rhsX) if rhsX else np.zeros((0, n))
    binary = [k * m + i for k in range(N) for i in model.binary_input_indices]
    binary += list(range(N * m, N * (m + rl)))
    lyap_cols = None
    if spec.lyapunov:
        if cert is None:
            raise ValueError("Lyapunov variants need a certificate")
        lyap_cols = np.concatenate([np.arange(m), N * m + np.arange(rl), N * (m + rl) + np.arange(model.dims.r_c)])
    return CondensedMiqp(cost.H, cost.F, cost.f0, Phi, phi0, phiX, tuple(sorted(binary)), eq_rows,
                         cert if spec.lyapunov else None, None, lyap_cols, model, cost)


# ---------------------------------------------------------------- control loop


@dataclass
class ControlResult:
    status: str
    u: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    U: np.ndarray
    J: float
    nodes: int
    qp_solves: int
    wall_time: float


class Controller:
    """Condensed problem built once; `step` solves it at a given state."""

    def __init__(self, spec: ControllerSpec, model: MldModel):
        self.spec = spec
        self.model = model
        self.pred = build_prediction(model, spec.N)
        self.cost = build_cost(spec, model, spec.N, self.pred)
        self.cmiqp = attach_constraints(spec, model, spec.N, pred=self.pred, cost=self.cost)
        self.opts = spec.solver_opts()

    def step(self, x_t) -> ControlResult:
        x_t = np.asarray(x_t, dtype=float).reshape(self.model.n)
        optimize = self.spec.variant != LYAP_FEASIBLE
        prob = self.cmiqp.problem(x_t, with_cost=optimize)
        sol = solve(prob, self.opts)
        st = sol.stats
        if sol.status == "infeasible":
            exc = Infeasible(f"{self.spec.variant} N={self.spec.N} infeasible at x={x_t.tolist()}")
            exc.stats = st
            raise exc
        if not sol.feasible:
            raise StepFailed(f"solver stopped with status {sol.status}", sol.status, st)
        m, rl, N = self.model.m, self.model.dims.r_l, self.spec.N
        U = sol.U
        u = U[:m]
        delta = np.round(U[N * m:N * m + rl])
        z = U[N * (m + rl):N * (m + rl) + self.model.dims.r_c]
        J = sol.J + self.cost.constant(x_t) if optimize else float("nan")
        return ControlResult(sol.status, u, delta, z, U, J, st.nodes, st.qp_solves, st.wall_time)


def solve_step(spec: ControllerSpec, model: MldModel, x_t, solver_opts: SolverOpts | None = None) -> ControlResult:
    if solver_opts is not None:
        spec = ControllerSpec(**{**spec.__dict__, "solver": solver_opts})
    return Controller(spec, model).step(x_t)


@dataclass
class ClosedLoopLog:
    """x and V have one more row than the per-step records unless the run stopped early."""

    x: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    y: np.ndarray
    V: np.ndarray
    J: np.ndarray
    status: list
    nodes: np.ndarray
    ms: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.status)

    @property
    def completed(self) -> bool:
        return all(s in ("optimal", "first_feasible") for s in self.status)

    @property
    def failed_at(self) -> int | None:
        for t, s in enumerate(self.status):
            if s not in ("optimal", "first_feasible"):
                return t
        return None

    def header(self) -> list[str]:
        n, m, rl, rc = self.x.shape[1], self.u.shape[1], self.delta.shape[1], self.z.shape[1]
        return (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                + [f"delta{i + 1}" for i in range(rl)] + [f"z{i + 1}" for i in range(rc)]
                + ["V", "J", "status", "nodes", "ms"])

    def rows(self):
        m, rl, rc = self.u.shape[1], self.delta.shape[1], self.z.shape[1]
        for t in range(max(len(self.x), self.steps)):
            xs = [repr(float(v)) for v in self.x[t]] if t < len(self.x) else [""] * self.x.shape[1]
            V = repr(float(self.V[t])) if t < len(self.V) else ""
            if t < self.steps:
                rec = ([repr(float(v)) for v in self.u[t]] + [repr(float(v)) for v in self.delta[t]]
                       + [repr(float(v)) for v in self.z[t]]
                       + [V, repr(float(self.J[t])), self.status[t], str(int(self.nodes[t])), repr(float(self.ms[t]))])
            else:
                rec = [""] * (m + rl + rc) + [V, "", "end", "", ""]
            yield [str(t)] + xs + rec

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            w.writerows(self.rows())


def run_rhc(spec: ControllerSpec, model: MldModel, x0, T: int, solver_opts: SolverOpts | None = None,
            disturbance=None) -> ClosedLoopLog:
    """Receding-horizon loop with the model as plant; stops at the first failed solve."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if solver_opts is not None:
        spec = ControllerSpec(**{**spec.__dict__, "solver": solver_opts})
    ctrl = Controller(spec, model)
    cert = spec.certificate
    n, m, rl, rc, p = model.n, model.m, model.dims.r_l, model.dims.r_c, model.p

    def V(x):
        return lyapunov.v_eval(cert, x) if cert is not None else float(np.abs(x).max())

    x = np.asarray(x0, dtype=float).reshape(n)
    xs, Vs = [x], [V(x)]
    us, ds, zs, ys, Js, status, nodes, ms = [], [], [], [], [], [], [], []
    for t in range(T):
        t0 = time.perf_counter()
        try:
            res = ctrl.step(x)
        except (Infeasible, StepFailed) as exc:
            status.append(getattr(exc, "status", "infeasible"))
            st = getattr(exc, "stats", None)
            nodes.append(st.nodes if st is not None else 0)
            ms.append(1e3 * (time.perf_counter() - t0))
            for lst, size in ((us, m), (ds, rl), (zs, rc), (ys, p)):
                lst.append(np.full(size, np.nan))
            Js.append(np.nan)
            break
        x_next, y = propagate(model, x, res.u, res.delta, res.z)
        if disturbance is not None:
            x_next = x_next + np.asarray(disturbance(t), dtype=float)
        us.append(res.u)
        ds.append(res.delta)
        zs.append(res.z)
        ys.append(y)
        Js.append(res.J)
        status.append(res.status)
        nodes.append(res.nodes)
        ms.append(1e3 * (time.perf_counter() - t0))
        x = x_next
        xs.append(x)
        Vs.append(V(x))
    k = len(status)

    def stack(lst, size):
        return np.array(lst, dtype=float).reshape(k, size)

    return ClosedLoopLog(
        x=np.array(xs), u=stack(us, m), delta=stack(ds, rl), z=stack(zs, rc), y=stack(ys, p),
        V=np.array(Vs), J=np.array(Js, dtype=float),
        status=status, nodes=np.array(nodes, dtype=int), ms=np.array(ms),
    )
