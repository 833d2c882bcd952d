"""Dense primal active-set solver for small convex QPs.

    minimize    0.5 x'Hx + f'x
    subject to  A x <= b

H only needs to be positive semidefinite: directions of zero reduced curvature
are followed as rays until a constraint blocks them. Rows that come in exactly
opposite pairs (a, b) / (-a, -b) are merged into equalities so the working set
never contains two parallel normals.

A feasible start is found with an elastic phase 1 (an LP over the original
variables plus one slack per violated row) solved by the same active-set loop,
so a warm start that violates only a few rows costs only a few pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class QPOptions:
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    dir_tol: float = 1e-12
    curv_tol: float = 1e-11
    max_iter: int | None = None
    stall_limit: int = 25


@dataclass
class QPSolution:
    status: str
    x: np.ndarray | None
    obj: float = np.inf
    working: tuple[int, ...] = ()
    iterations: int = 0
    multipliers: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _Rows:
    """Normalized constraint rows with equality pairs merged."""

    def __init__(self, A: np.ndarray, b: np.ndarray, merge_pairs: bool = True):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        r = A.shape[0]
        norms = np.linalg.norm(A, axis=1) if r else np.zeros(0)
        self.trivial_ok = True
        keep = norms > 0
        # all-zero rows: 0 <= b must hold
        if np.any(b[~keep] < -1e-12):
            self.trivial_ok = False
        idx = np.flatnonzero(keep)
        An = A[idx] / norms[idx, None]
        bn = b[idx] / norms[idx]
        eq = np.zeros(len(idx), dtype=bool)
        drop = np.zeros(len(idx), dtype=bool)
        if merge_pairs and len(idx) > 1:
            G = An @ An.T
            ii, jj = np.nonzero(np.triu(G < -1.0 + 1e-13, k=1))
            for i, j in zip(ii, jj):
                if drop[i] or drop[j] or eq[j]:
                    continue
                if abs(bn[i] + bn[j]) <= 1e-12 * max(1.0, abs(bn[i])):
                    eq[i] = True
                    drop[j] = True
        sel = ~drop
        self.A = An[sel]
        self.b = bn[sel]
        self.eq = eq[sel]
        # map local row -> original row index
        self.orig = idx[sel]
        self.scale = norms[idx][sel]
        self.n_orig = r

    def local_of(self, orig_rows) -> list[int]:
        pos = {int(o): k for k, o in enumerate(self.orig)}
        return [pos[o] for o in orig_rows if o in pos]


def _independent(A: np.ndarray, candidates: list[int], tol: float = 1e-9) -> list[int]:
    """Greedy subset of candidate rows with linearly independent normals."""
    chosen: list[int] = []
    Q = np.zeros((A.shape[1], 0))
    for i in candidates:
        a = A[i]
        res = a - Q @ (Q.T @ a)
        nr = np.linalg.norm(res)
        if nr > tol and Q.shape[1] < A.shape[1]:
            Q = np.column_stack([Q, res / nr])
            chosen.append(i)
    return chosen


def _active_set(H, f, A, b, eq, x, W, opts: QPOptions):
    """Primal active-set iterations from a feasible x with working set W.

    Returns (status, x, W, lambda_W, iterations).
    """
    d = x.size
    r = A.shape[0]
    eq_rows = [int(i) for i in np.flatnonzero(eq)]
    W = _independent(A, eq_rows + [int(i) for i in W if not eq[i]])
    max_iter = opts.max_iter or 50 * (d + r) + 100
    stalls = 0
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        g = H @ x + f
        k = len(W)
        if k:
            Aw = A[W]
            Q, R = np.linalg.qr(Aw.T, mode="complete")
            Z = Q[:, k:]
        else:
            Q = R = None
            Z = np.eye(d)
        p = np.zeros(d)
        full_step = True
        if Z.shape[1]:
            gz = Z.T @ g
            Hz = Z.T @ H @ Z
            w, V = np.linalg.eigh(Hz)
            scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
            pos = w > opts.curv_tol * scale
            gv = V.T @ gz
            flat = ~pos
            if np.any(flat) and np.linalg.norm(gv[flat]) > opts.opt_tol * max(1.0, np.linalg.norm(g)):
                # zero-curvature descent ray
                step = np.zeros_like(gv)
                step[flat] = -gv[flat]
                p = Z @ (V @ step)
                full_step = False
            else:
                step = np.zeros_like(gv)
                step[pos] = -gv[pos] / w[pos]
                p = Z @ (V @ step)
        pn = np.linalg.norm(p)
        if pn <= opts.dir_tol * max(1.0, np.linalg.norm(x)):
            if not k:
                return OPTIMAL, x, W, np.zeros(0), it
            lam = -np.linalg.solve(R[:k, :k], Q[:, :k].T @ g)
            ineq = [j for j in range(k) if not eq[W[j]]]
            if not ineq:
                return OPTIMAL, x, W, lam, it
            lam_in = np.array([lam[j] for j in ineq])
            lam_scale = max(1.0, float(np.max(np.abs(lam))))
            if lam_in.min() >= -opts.opt_tol * lam_scale:
                return OPTIMAL, x, W, lam, it
            if stalls > opts.stall_limit:
                # Bland: lowest row index with a negative multiplier
                neg = [j for j in ineq if lam[j] < -opts.opt_tol * lam_scale]
                j_drop = min(neg, key=lambda j: W[j])
            else:
                j_drop = ineq[int(np.argmin(lam_in))]
            W.pop(j_drop)
            continue
        # ratio test
        Ap = A @ p
        alpha = 1.0 if full_step else np.inf
        block = -1
        inW = np.zeros(r, dtype=bool)
        inW[W] = True
        cand = np.flatnonzero((~inW) & (Ap > opts.dir_tol * pn))
        if cand.size:
            slack = b[cand] - A[cand] @ x
            ratios = np.maximum(slack, 0.0) / Ap[cand]
            jmin = int(np.argmin(ratios))
            amin = ratios[jmin]
            if amin < alpha:
                # ties go to the lowest row index
                ties = cand[ratios <= amin + 1e-14 * max(1.0, amin)]
                block = int(ties.min())
                alpha = float(ratios[np.searchsorted(cand, block)])
        if not np.isfinite(alpha):
            return UNBOUNDED, x, W, lam, it
        stalls = stalls + 1 if alpha * pn <= opts.dir_tol else 0
        x = x + alpha * p
        if block >= 0:
            W.append(block)
    return NUMERICAL_FAILURE, x, W, lam, max_iter


def _phase1(A, b, eq, x, W, opts: QPOptions):
    """Elastic LP: find x with A x <= b (equality rows exact) starting from x."""
    d = x.size
    res = A @ x - b
    viol_up = np.flatnonzero(res > opts.feas_tol)
    viol_dn = np.flatnonzero(eq & (res < -opts.feas_tol))
    nv = viol_up.size + viol_dn.size
    if nv == 0:
        act = [i for i in W if abs(res[i]) <= opts.feas_tol]
        act += [i for i in np.flatnonzero(eq) if i not in act]
        return True, x, _independent(A, act)
    r = A.shape[0]
    Ae = np.zeros((r + nv, d + nv))
    be = np.zeros(r + nv)
    Ae[:r, :d] = A
    be[:r] = b
    s0 = np.zeros(nv)
    for k, i in enumerate(viol_up):
        Ae[i, d + k] = -1.0
        s0[k] = res[i]
    for k, i in enumerate(viol_dn):
        Ae[i, d + viol_up.size + k] = 1.0
        s0[viol_up.size + k] = -res[i]
    # slacks nonnegative
    Ae[r:, d:] = -np.eye(nv)
    col_norm = np.linalg.norm(Ae[:r], axis=1)
    Ae[:r] /= col_norm[:, None]
    be[:r] /= col_norm
    eq_e = np.concatenate([eq, np.zeros(nv, dtype=bool)])
    # violated inequality rows become equalities with their slack during phase 1
    # only until the slack hits zero, so keep them as inequalities but start in W
    W0 = [int(i) for i in viol_up] + [i for i in W if abs(res[i]) <= opts.feas_tol]
    fe = np.concatenate([np.zeros(d), np.ones(nv)])
    He = np.zeros((d + nv, d + nv))
    y0 = np.concatenate([x, s0])
    status, y, We, _, _ = _active_set(He, fe, Ae, be, eq_e, y0, W0, opts)
    if status != OPTIMAL:
        return False, None, []
    s = y[d:]
    if s.sum() > opts.feas_tol * max(1.0, nv):
        return False, None, []
    x = y[:d]
    res = A @ x - b
    act = [i for i in We if i < r and abs(res[i]) <= 10 * opts.feas_tol]
    act += [i for i in np.flatnonzero(eq) if i not in act]
    return True, x, _independent(A, act)


def solve_qp(
    H,
    f,
    A=None,
    b=None,
    *,
    x0=None,
    working=(),
    opts: QPOptions | None = None,
) -> QPSolution:
    """Solve a convex QP; `working` holds original row indices to warm start from."""
    opts = opts or QPOptions()
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float).ravel()
    d = f.size
    H = 0.5 * (H + H.T) if d else H
    if A is None:
        A = np.zeros((0, d))
        b = np.zeros(0)
    rows = _Rows(A, b)
    if not rows.trivial_ok:
        return QPSolution(INFEASIBLE, None)
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    W = rows.local_of(working)
    ok, x, W = _phase1(rows.A, rows.b, rows.eq, x, W, opts)
    if not ok:
        return QPSolution(INFEASIBLE, None)
    if not np.any(H) and not np.any(f):
        status, lam, it = OPTIMAL, None, 0
    else:
        status, x, W, lam, it = _active_set(H, f, rows.A, rows.b, rows.eq, x, W, opts)
    if status != OPTIMAL:
        return QPSolution(status, x, iterations=it)
    obj = float(0.5 * x @ H @ x + f @ x)
    mult = None
    if lam is not None and len(W):
        mult = np.zeros(rows.n_orig)
        mult[rows.orig[W]] = lam / rows.scale[W]
    return QPSolution(OPTIMAL, x, obj, tuple(int(rows.orig[i]) for i in W), it, mult)
