"""Mixed Logical Dynamical systems.

    x(t+1) = A x + B1 u + B2 delta + B3 z
    y(t)   = C x + D1 u + D2 delta + D3 z
    E2 delta + E3 z <= E1 u + E4 x + E5

Given (x, u), the auxiliaries (delta, z) are recovered by a mixed-integer
feasibility solve.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .miqp import MiqpProblem, SolverOpts, solve

MATRICES = ("A", "B1", "B2", "B3", "C", "D1", "D2", "D3", "E1", "E2", "E3", "E4", "E5")
BINARY_TOL = 1e-6
TOL_EQ = 1e-8


class Infeasible(RuntimeError):
    """(x, u) lies outside the region where the MLD is defined."""

    def __init__(self, msg, step=None, partial=None):
        super().__init__(msg)
        self.step = step
        self.partial = partial


class WellPosednessWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Dims:
    n_c: int
    n_l: int = 0
    m_c: int = 0
    m_l: int = 0
    p_c: int = 0
    p_l: int = 0
    r_c: int = 0
    r_l: int = 0
    q_e: int = 0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if int(v) != v or v < 0:
                raise ValueError(f"{k} must be a nonnegative integer")
        if self.n < 1:
            raise ValueError("need at least one state")

    @property
    def n(self):
        return self.n_c + self.n_l

    @property
    def m(self):
        return self.m_c + self.m_l

    @property
    def p(self):
        return self.p_c + self.p_l

    def shape(self, name: str) -> tuple[int, int]:
        n, m, p, rl, rc, q = self.n, self.m, self.p, self.r_l, self.r_c, self.q_e
        return {
            "A": (n, n), "B1": (n, m), "B2": (n, rl), "B3": (n, rc),
            "C": (p, n), "D1": (p, m), "D2": (p, rl), "D3": (p, rc),
            "E1": (q, m), "E2": (q, rl), "E3": (q, rc), "E4": (q, n), "E5": (q,),
        }[name]


@dataclass(frozen=True)
class MldModel:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    C: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E4: np.ndarray
    E5: np.ndarray
    dims: Dims
    binary_state_indices: tuple = ()
    binary_input_indices: tuple = ()
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for k in MATRICES:
            a = np.array(getattr(self, k), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, k, a)
        object.__setattr__(self, "binary_state_indices", tuple(int(i) for i in self.binary_state_indices))
        object.__setattr__(self, "binary_input_indices", tuple(int(i) for i in self.binary_input_indices))

    @classmethod
    def build(cls, A, B1=None, *, B2=None, B3=None, C=None, D1=None, D2=None, D3=None,
              E1=None, E2=None, E3=None, E4=None, E5=None, r_l=0, r_c=0,
              binary_state_indices=(), binary_input_indices=(), names=None) -> "MldModel":
        """Fill omitted matrices with zeros of the right shape."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        B1 = np.zeros((n, 0)) if B1 is None else np.asarray(B1, dtype=float).reshape(n, -1)
        m = B1.shape[1]
        C = np.eye(n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        p = C.shape[0]
        E5 = np.zeros(0) if E5 is None else np.asarray(E5, dtype=float).ravel()
        q = E5.size

        def z(M, shape):
            return np.zeros(shape) if M is None else np.asarray(M, dtype=float).reshape(shape)

        nl, ml = len(binary_state_indices), len(binary_input_indices)
        dims = Dims(n_c=n - nl, n_l=nl, m_c=m - ml, m_l=ml, p_c=p, r_c=r_c, r_l=r_l, q_e=q)
        return cls(
            A=A, B1=B1, B2=z(B2, (n, r_l)), B3=z(B3, (n, r_c)), C=C,
            D1=z(D1, (p, m)), D2=z(D2, (p, r_l)), D3=z(D3, (p, r_c)),
            E1=z(E1, (q, m)), E2=z(E2, (q, r_l)), E3=z(E3, (q, r_c)), E4=z(E4, (q, n)), E5=E5,
            dims=dims, binary_state_indices=binary_state_indices,
            binary_input_indices=binary_input_indices, names=names or {},
        )

    @property
    def n(self):
        return self.dims.n

    @property
    def m(self):
        return self.dims.m

    @property
    def p(self):
        return self.dims.p

    def to_json(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in MATRICES}
        d["dims"] = dict(self.dims.__dict__)
        d["binary_state_indices"] = list(self.binary_state_indices)
        d["binary_input_indices"] = list(self.binary_input_indices)
        if self.names:
            d["names"] = self.names
        return d

    @classmethod
    def from_json(cls, data: dict) -> "MldModel":
        dims = Dims(**data["dims"])
        mats = {k: np.asarray(data[k], dtype=float).reshape(dims.shape(k)) for k in MATRICES}
        return cls(**mats, dims=dims,
                   binary_state_indices=data.get("binary_state_indices", ()),
                   binary_input_indices=data.get("binary_input_indices", ()),
                   names=data.get("names", {}))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "MldModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def validate(model: MldModel, check_feasible: bool = True) -> list[str]:
    """Return a list of problems; empty means well formed."""
    report = []
    d = model.dims
    for k in MATRICES:
        got, want = getattr(model, k).shape, d.shape(k)
        if got != want:
            report.append(f"{k} has shape {got}, expected {want}")
    for label, idx, size, count in (
        ("binary_state_indices", model.binary_state_indices, d.n, d.n_l),
        ("binary_input_indices", model.binary_input_indices, d.m, d.m_l),
    ):
        bad = [i for i in idx if not 0 <= i < size]
        if bad:
            report.append(f"{label} out of range: {bad}")
        if len(set(idx)) != count:
            report.append(f"{label} lists {len(set(idx))} entries, dims say {count}")
    for k in MATRICES:
        if not np.all(np.isfinite(getattr(model, k))):
            report.append(f"{k} has non-finite entries")
    if not report and check_feasible and d.q_e and not _constraints_nonempty(model):
        report.append("constraint rows admit no (x, u, delta, z)")
    return report


def _constraints_nonempty(model: MldModel) -> bool:
    n, m, rl, rc = model.n, model.m, model.dims.r_l, model.dims.r_c
    Phi = np.hstack([-model.E4, -model.E1, model.E2, model.E3])
    d = n + m + rl + rc
    binary = list(model.binary_state_indices) + [n + i for i in model.binary_input_indices]
    binary += list(range(n + m, n + m + rl))
    prob = MiqpProblem(np.zeros((d, d)), np.zeros(d), Phi, model.E5, tuple(binary))
    return solve(prob, SolverOpts(mode="first_feasible")).feasible


def _check_binary(values, idx, label):
    for i in idx:
        if min(abs(values[i]), abs(values[i] - 1)) > BINARY_TOL:
            raise ValueError(f"{label}[{i}] = {values[i]} is not binary")


def aux_problem(model: MldModel, x, u) -> MiqpProblem:
    """Feasibility MIQP over (delta, z) for fixed (x, u)."""
    rl, rc = model.dims.r_l, model.dims.r_c
    d = rl + rc
    Phi = np.hstack([model.E2, model.E3])
    phi = model.E1 @ u + model.E4 @ x + model.E5
    return MiqpProblem(np.zeros((d, d)), np.zeros(d), Phi, phi, tuple(range(rl)))


@dataclass
class StepResult:
    x_next: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    z: np.ndarray


def _aux(model, x, u, opts, probe):
    rl, rc = model.dims.r_l, model.dims.r_c
    if rl + rc == 0:
        if model.dims.q_e and np.any(model.E1 @ u + model.E4 @ x + model.E5 < -TOL_EQ):
            raise Infeasible("(x, u) violates the constraint rows")
        return np.zeros(0), np.zeros(0)
    prob = aux_problem(model, x, u)
    sol = solve(prob, opts or SolverOpts(mode="first_feasible"))
    if not sol.feasible:
        raise Infeasible("no (delta, z) satisfies the constraint rows at (x, u)")
    delta = np.round(sol.U[:rl])
    z = sol.U[rl:]
    if probe and rl:
        # exclusion cut: sum over ones of (1 - d) + sum over zeros of d >= 1
        cut = np.zeros(rl + rc)
        cut[:rl] = np.where(delta > 0.5, 1.0, -1.0)
        alt = MiqpProblem(prob.H, prob.f, np.vstack([prob.Phi, cut]),
                          np.append(prob.phi, delta.sum() - 1.0), prob.binary)
        if solve(alt, SolverOpts(mode="first_feasible")).feasible:
            warnings.warn("a second feasible delta exists at this (x, u)", WellPosednessWarning, stacklevel=3)
    return delta, z


def step(model: MldModel, x, u, solver_opts: SolverOpts | None = None, probe: bool = False) -> StepResult:
    """One MLD transition; the first feasible (delta, z) is used."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.m)
    _check_binary(x, model.binary_state_indices, "x")
    _check_binary(u, model.binary_input_indices, "u")
    delta, z = _aux(model, x, u, solver_opts, probe)
    return StepResult(*propagate(model, x, u, delta, z), delta, z)


def propagate(model: MldModel, x, u, delta, z):
    """(x_next, y) from the linear update equations."""
    x_next = model.A @ x + model.B1 @ u
    y = model.C @ x + model.D1 @ u
    if delta.size:
        x_next = x_next + model.B2 @ delta
        y = y + model.D2 @ delta
    if z.size:
        x_next = x_next + model.B3 @ z
        y = y + model.D3 @ z
    return x_next, y


def constraint_residual(model: MldModel, x, u, delta, z) -> float:
    """max(E2 d + E3 z - E1 u - E4 x - E5), or -inf without rows."""
    if not model.dims.q_e:
        return -np.inf
    r = model.E2 @ delta + model.E3 @ z - model.E1 @ u - model.E4 @ x - model.E5
    return float(r.max())


@dataclass
class EquilibriumPair:
    x_e: np.ndarray
    u_e: np.ndarray
    delta_e: np.ndarray
    z_e: np.ndarray

    def __post_init__(self):
        for k in ("x_e", "u_e", "delta_e", "z_e"):
            setattr(self, k, np.atleast_1d(np.asarray(getattr(self, k), dtype=float)))

    @classmethod
    def origin(cls, model: MldModel) -> "EquilibriumPair":
        return cls(np.zeros(model.n), np.zeros(model.m), np.zeros(model.dims.r_l), np.zeros(model.dims.r_c))


def check_equilibrium(model: MldModel, pair: EquilibriumPair, tol_eq: float = TOL_EQ) -> bool:
    for v, idx in ((pair.x_e, model.binary_state_indices), (pair.u_e, model.binary_input_indices),
                   (pair.delta_e, range(pair.delta_e.size))):
        if any(min(abs(v[i]), abs(v[i] - 1)) > BINARY_TOL for i in idx):
            return False
    x_next, _ = propagate(model, pair.x_e, pair.u_e, pair.delta_e, pair.z_e)
    if np.max(np.abs(pair.x_e - x_next)) > tol_eq:
        return False
    return constraint_residual(model, pair.x_e, pair.u_e, pair.delta_e, pair.z_e) <= tol_eq


@dataclass
class Trajectory:
    x: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    u: np.ndarray


def simulate_open_loop(model: MldModel, x0, inputs, solver_opts: SolverOpts | None = None) -> Trajectory:
    """Apply an input sequence; raises Infeasible with the partial trajectory attached."""
    U = np.asarray(inputs, dtype=float).reshape(-1, model.m)
    if U.shape[0] < 1:
        raise ValueError("need at least one input")
    xs = [np.asarray(x0, dtype=float).reshape(model.n)]
    ys, ds, zs = [], [], []

    def pack():
        rl, rc = model.dims.r_l, model.dims.r_c
        k = len(ys)
        return Trajectory(np.array(xs), np.array(ys, dtype=float).reshape(k, model.p),
                          np.array(ds, dtype=float).reshape(k, rl), np.array(zs, dtype=float).reshape(k, rc), U[:k])

    for k, u in enumerate(U):
        try:
            r = step(model, xs[-1], u, solver_opts)
        except Infeasible as exc:
            raise Infeasible(f"infeasible at step {k}: {exc}", step=k, partial=pack()) from None
        xs.append(r.x_next)
        ys.append(r.y)
        ds.append(r.delta)
        zs.append(r.z)
    return pack()
