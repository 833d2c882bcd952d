"""Branch and bound for mixed-integer QPs with binary variables.

Problem form::

    minimize    0.5 U'HU + f'U
    subject to  Phi U <= phi,   lb <= U <= ub,   U_j in {0, 1} for j in binary

Each node fixes a subset of the binaries, substitutes them out and solves the
convex relaxation of the remaining variables with the active-set QP. Children
start from the parent's point and working set.
"""

from __future__ import annotations

import heapq
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .qp import INFEASIBLE, OPTIMAL, QPOptions, solve_qp

OPTIMAL_STATUS = "optimal"
FIRST_FEASIBLE = "first_feasible"
INFEASIBLE_STATUS = "infeasible"
NODE_LIMIT = "node_limit"


class NumericalFailure(RuntimeError):
    pass


class TooManyBinaries(ValueError):
    pass


@dataclass
class MiqpProblem:
    H: np.ndarray
    f: np.ndarray
    Phi: np.ndarray
    phi: np.ndarray
    binary: tuple[int, ...] = ()
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float).ravel()
        d = self.f.size
        self.H = np.asarray(self.H, dtype=float).reshape(d, d)
        self.Phi = np.asarray(self.Phi, dtype=float).reshape(-1, d)
        self.phi = np.asarray(self.phi, dtype=float).ravel()
        self.binary = tuple(sorted(int(j) for j in self.binary))
        lb = np.full(d, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).copy()
        ub = np.full(d, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).copy()
        for j in self.binary:
            if not 0 <= j < d:
                continue  # reported by validate()
            lb[j] = max(lb[j], 0.0)
            ub[j] = min(ub[j], 1.0)
        self.lb, self.ub = lb, ub

    @property
    def n(self) -> int:
        return self.f.size

    def validate(self) -> list[str]:
        errors = []
        if self.Phi.shape[0] != self.phi.size:
            errors.append(f"Phi has {self.Phi.shape[0]} rows but phi has {self.phi.size}")
        if not np.allclose(self.H, self.H.T, atol=1e-12):
            errors.append("H is not symmetric")
        elif self.n and np.linalg.eigvalsh(self.H).min() < -1e-10:
            errors.append("H is not positive semidefinite")
        bad = [j for j in self.binary if not 0 <= j < self.n]
        if bad:
            errors.append(f"binary indices out of range: {bad}")
        if np.any(self.lb > self.ub):
            errors.append("lb > ub")
        return errors

    def objective(self, U) -> float:
        U = np.asarray(U, dtype=float)
        return float(0.5 * U @ self.H @ U + self.f @ U)

    def residuals(self, U) -> tuple[float, float]:
        """(max constraint violation, max integrality violation) at U."""
        U = np.asarray(U, dtype=float)
        viol = 0.0
        if self.phi.size:
            viol = max(viol, float(np.max(self.Phi @ U - self.phi)))
        viol = max(viol, float(np.max(self.lb - U, initial=0.0)), float(np.max(U - self.ub, initial=0.0)))
        ints = [abs(U[j] - round(U[j])) for j in self.binary]
        return viol, max(ints, default=0.0)

    def to_json(self) -> dict:
        def clean(v):
            return [None if not np.isfinite(a) else float(a) for a in v]

        return {
            "H": self.H.tolist(),
            "f": self.f.tolist(),
            "Phi": self.Phi.tolist(),
            "phi": self.phi.tolist(),
            "binary": list(self.binary),
            "bounds": {"lb": clean(self.lb), "ub": clean(self.ub)},
        }

    @classmethod
    def from_json(cls, data: dict) -> "MiqpProblem":
        f = np.asarray(data["f"], dtype=float)
        d = f.size
        bounds = data.get("bounds") or {}

        def parse(key, default):
            vals = bounds.get(key)
            if vals is None:
                return np.full(d, default)
            return np.array([default if v is None else float(v) for v in vals])

        Phi = np.asarray(data.get("Phi", []), dtype=float).reshape(-1, d)
        return cls(
            H=np.asarray(data["H"], dtype=float).reshape(d, d),
            f=f,
            Phi=Phi,
            phi=np.asarray(data.get("phi", []), dtype=float),
            binary=tuple(data.get("binary", ())),
            lb=parse("lb", -np.inf),
            ub=parse("ub", np.inf),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "MiqpProblem":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class SolverOpts:
    mode: str = "optimal"  # or "first_feasible"
    int_tol: float = 1e-6
    gap: float = 1e-8
    node_limit: int = 1_000_000
    node_selection: str | None = None  # best_bound | depth_first; default by mode
    branching: str = "most_fractional"  # or first_index
    qp_tol: float = 1e-9
    deterministic: bool = True
    record_tree: bool = False

    def __post_init__(self):
        if self.mode not in ("optimal", "first_feasible"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.branching not in ("most_fractional", "first_index"):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        if self.node_selection is None:
            self.node_selection = "best_bound" if self.mode == "optimal" else "depth_first"
        if self.node_selection not in ("best_bound", "depth_first"):
            raise ValueError(f"unknown node selection {self.node_selection!r}")
        for name in ("int_tol", "gap", "qp_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveStats:
    nodes: int = 0
    qp_solves: int = 0
    wall_time: float = 0.0
    max_depth: int = 0
    # (node id, parent id, relaxation objective) when record_tree is set
    tree: list[tuple[int, int, float]] = field(default_factory=list)


@dataclass
class Solution:
    status: str
    U: np.ndarray | None
    J: float
    stats: SolveStats

    @property
    def feasible(self) -> bool:
        return self.status in (OPTIMAL_STATUS, FIRST_FEASIBLE)


class _Relaxation:
    """Node relaxations of one problem with stable row ids for warm starts."""

    def __init__(self, prob: MiqpProblem, qp_opts: QPOptions):
        self.prob = prob
        self.qp_opts = qp_opts
        d = prob.n
        rows = [prob.Phi]
        rhs = [prob.phi]
        owner = [np.full(prob.phi.size, -1)]
        for j in range(d):
            if np.isfinite(prob.ub[j]):
                e = np.zeros((1, d))
                e[0, j] = 1.0
                rows.append(e)
                rhs.append([prob.ub[j]])
                owner.append([j])
            if np.isfinite(prob.lb[j]):
                e = np.zeros((1, d))
                e[0, j] = -1.0
                rows.append(e)
                rhs.append([-prob.lb[j]])
                owner.append([j])
        self.A = np.vstack(rows) if rows else np.zeros((0, d))
        self.b = np.concatenate([np.asarray(r, dtype=float) for r in rhs])
        self.owner = np.concatenate([np.asarray(o) for o in owner]).astype(int)

    def solve(self, fixed: dict[int, float], x0=None, working=()):
        prob = self.prob
        d = prob.n
        fixed_idx = np.array(sorted(fixed), dtype=int)
        free = np.setdiff1d(np.arange(d), fixed_idx)
        v = np.array([fixed[j] for j in fixed_idx], dtype=float)
        keep = ~np.isin(self.owner, fixed_idx)
        A = self.A[keep][:, free]
        b = self.b[keep] - self.A[keep][:, fixed_idx] @ v
        ids = np.flatnonzero(keep)
        Hff = prob.H[np.ix_(free, free)]
        ff = prob.f[free] + prob.H[np.ix_(free, fixed_idx)] @ v
        const = 0.5 * v @ prob.H[np.ix_(fixed_idx, fixed_idx)] @ v + prob.f[fixed_idx] @ v
        pos = {int(i): k for k, i in enumerate(ids)}
        w_local = [pos[i] for i in working if i in pos]
        xs = None if x0 is None else np.asarray(x0, dtype=float)[free]
        sol = solve_qp(Hff, ff, A, b, x0=xs, working=w_local, opts=self.qp_opts)
        if sol.status == INFEASIBLE:
            return None
        if sol.status != OPTIMAL:
            raise NumericalFailure(f"QP relaxation ended with status {sol.status}")
        U = np.empty(d)
        U[free] = sol.x
        U[fixed_idx] = v
        return U, sol.obj + const, tuple(int(ids[i]) for i in sol.working)


def solve(problem: MiqpProblem, opts: SolverOpts | None = None) -> Solution:
    """Branch and bound; `opts.mode` picks global optimum or first integer-feasible point."""
    opts = opts or SolverOpts()
    t0 = time.perf_counter()
    stats = SolveStats()
    relax = _Relaxation(problem, QPOptions(feas_tol=opts.qp_tol, opt_tol=opts.qp_tol))
    first_mode = opts.mode == "first_feasible"
    best_J = np.inf
    best_U = None
    counter = itertools.count()
    node_ids = itertools.count()
    # node: (bound, depth, fixed, x0, working, parent id)
    root = (-np.inf, 0, {}, None, (), -1)
    if opts.node_selection == "best_bound":
        heap = [(-np.inf, next(counter), root)]
        pop = lambda: heapq.heappop(heap)[2]  # noqa: E731
        push = lambda node: heapq.heappush(heap, (node[0], next(counter), node))  # noqa: E731
        pending = heap
    else:
        stack = [root]
        pop = stack.pop
        push = stack.append
        pending = stack

    def finish(status):
        stats.wall_time = time.perf_counter() - t0
        return Solution(status, best_U, best_J, stats)

    while pending:
        bound, depth, fixed, x0, working, parent = pop()
        if not first_mode and bound >= best_J - opts.gap:
            if opts.node_selection == "best_bound":
                break
            continue
        if stats.nodes >= opts.node_limit:
            return finish(NODE_LIMIT)
        stats.nodes += 1
        stats.max_depth = max(stats.max_depth, depth)
        node_id = next(node_ids)
        stats.qp_solves += 1
        res = relax.solve(fixed, x0, working)
        if res is None:
            continue
        U, J, W = res
        if opts.record_tree:
            stats.tree.append((node_id, parent, J))
        if not first_mode and J >= best_J - opts.gap:
            continue
        free_bin = [j for j in problem.binary if j not in fixed]
        frac = {j: min(U[j], 1.0 - U[j]) for j in free_bin}
        branch_on = [j for j in free_bin if frac[j] > opts.int_tol]
        if not branch_on:
            polished_fixed = dict(fixed)
            polished_fixed.update({j: float(round(U[j])) for j in free_bin})
            stats.qp_solves += 1
            pol = relax.solve(polished_fixed, U, W) if free_bin else res
            if pol is not None:
                Up, Jp, _ = pol
                if Jp < best_J - opts.gap or best_U is None:
                    best_U, best_J = Up, Jp
                    if first_mode:
                        return finish(FIRST_FEASIBLE)
                continue
            # rounding broke feasibility: keep branching on the least integral binary
            branch_on = [max(free_bin, key=lambda j: (frac[j], -j))] if free_bin else []
            if not branch_on:
                continue
        if opts.branching == "first_index":
            j = min(branch_on)
        else:
            j = max(branch_on, key=lambda k: (frac[k], -k))
        near = 1.0 if U[j] >= 0.5 else 0.0
        children = [
            (J, depth + 1, {**fixed, j: 1.0 - near}, U, W, node_id),
            (J, depth + 1, {**fixed, j: near}, U, W, node_id),
        ]
        if opts.node_selection == "best_bound":
            children.reverse()
        for child in children:
            push(child)

    if best_U is None:
        return finish(INFEASIBLE_STATUS)
    return finish(FIRST_FEASIBLE if first_mode else OPTIMAL_STATUS)


def brute_force(problem: MiqpProblem, max_binaries: int = 20) -> Solution:
    """Enumerate every binary assignment and solve the remaining QP."""
    nb = len(problem.binary)
    if nb > max_binaries:
        raise TooManyBinaries(f"{nb} binaries exceed the enumeration guard of {max_binaries}")
    t0 = time.perf_counter()
    stats = SolveStats()
    relax = _Relaxation(problem, QPOptions())
    best_U, best_J = None, np.inf
    for bits in itertools.product((0.0, 1.0), repeat=nb):
        stats.nodes += 1
        stats.qp_solves += 1
        res = relax.solve(dict(zip(problem.binary, bits)))
        if res is not None and res[1] < best_J:
            best_U, best_J = res[0], res[1]
    stats.wall_time = time.perf_counter() - t0
    status = INFEASIBLE_STATUS if best_U is None else OPTIMAL_STATUS
    return Solution(status, best_U, best_J, stats)
