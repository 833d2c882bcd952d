"""Infinity-norm Lyapunov functions V(x) = ||Y x||_inf.

A matrix Y with full column rank and gamma > 0 is accepted when

    gamma <= ||Y||_inf <= 1 + gamma,

which gives the contraction factor theta = ||Y||_inf - gamma in [0, 1]. The
closed-loop decrease V(x+) <= V(x) - gamma ||x||_inf is imposed as 2c linear
rows on the first predicted move.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

RANK_TOL = 1e-10
TRAJ_TOL = 1e-6


class SynthesisFailed(RuntimeError):
    pass


def inf_norm(M) -> float:
    """Induced infinity norm (max absolute row sum)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(M).sum(axis=1).max()) if M.size else 0.0


@dataclass(frozen=True)
class LyapunovCertificate:
    Y: np.ndarray
    gamma: float
    theta: float

    @property
    def rows(self) -> int:
        return self.Y.shape[0]

    @property
    def n(self) -> int:
        return self.Y.shape[1]

    @property
    def is_identity(self) -> bool:
        return self.Y.shape[0] == self.Y.shape[1] and np.array_equal(self.Y, np.eye(self.n))

    def to_json(self) -> dict:
        return {"Y": self.Y.tolist(), "gamma": self.gamma, "theta": self.theta}

    @classmethod
    def from_json(cls, data: dict) -> "LyapunovCertificate":
        res = check_theorem1(np.asarray(data["Y"], dtype=float), float(data["gamma"]))
        if not isinstance(res, LyapunovCertificate):
            raise ValueError("; ".join(res.violations))
        return res


@dataclass
class ViolationReport:
    violations: list = field(default_factory=list)
    norm: float = float("nan")
    rank: int = 0

    def __bool__(self):
        return False


def v_eval(cert_or_Y, x) -> float:
    Y = cert_or_Y.Y if isinstance(cert_or_Y, LyapunovCertificate) else np.atleast_2d(cert_or_Y)
    x = np.asarray(x, dtype=float)
    if x.ndim > 1:
        return np.abs(x @ Y.T).max(axis=-1)
    return float(np.abs(Y @ x).max())


def numerical_rank(Y) -> int:
    s = np.linalg.svd(np.atleast_2d(Y), compute_uv=False)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def check_theorem1(Y, gamma: float):
    """Certificate if gamma <= ||Y|| <= 1 + gamma and rank(Y) = n, else a report."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    norm = inf_norm(Y)
    rank = numerical_rank(Y)
    bad = []
    if Y.shape[0] < Y.shape[1] or rank < Y.shape[1]:
        bad.append(f"rank(Y) = {rank} < n = {Y.shape[1]}")
    if norm < gamma:
        bad.append(f"lower bound violated: ||Y||_inf = {norm:.6g} < gamma = {gamma:.6g}")
    if norm > 1 + gamma:
        bad.append(f"upper bound violated: ||Y||_inf = {norm:.6g} > 1 + gamma = {1 + gamma:.6g}")
    if bad:
        return ViolationReport(bad, norm, rank)
    Y = Y.copy()
    Y.setflags(write=False)
    return LyapunovCertificate(Y, float(gamma), norm - float(gamma))


@dataclass
class DecreaseRows:
    """Rows G [u; delta; z] <= h encoding V(x+) <= V(x_t) - gamma ||x_t||."""

    G: np.ndarray
    h: np.ndarray
    rhs: float
    rhs_negative: bool


def decrease_rhs(cert: LyapunovCertificate, x) -> float:
    x = np.asarray(x, dtype=float)
    return v_eval(cert, x) - cert.gamma * float(np.abs(x).max(initial=0.0))


def decrease_rows(cert: LyapunovCertificate, model, x_t) -> DecreaseRows:
    """2c rows +-Y_i (A x_t + B1 u + B2 delta + B3 z) <= rhs over (u, delta, z)."""
    x_t = np.asarray(x_t, dtype=float).reshape(model.n)
    if cert.n != model.n:
        raise ValueError("certificate and model dimensions differ")
    Y = cert.Y
    rhs = decrease_rhs(cert, x_t)
    YB = Y @ np.hstack([model.B1, model.B2, model.B3])
    YAx = Y @ (model.A @ x_t)
    G = np.vstack([YB, -YB])
    h = np.concatenate([rhs - YAx, rhs + YAx])
    return DecreaseRows(G, h, rhs, bool(rhs < 0 and np.any(x_t != 0)))


# ---------------------------------------------------------------- synthesis


@dataclass
class SynthOpts:
    Y0: np.ndarray | None = None
    max_iters: int = 50
    theta_target: float | None = None
    lp_tol: float = 1e-9
    max_rows: int = 2000


def _support(Y, a) -> float:
    """max a'x subject to ||Y x||_inf <= 1 (assumes a bounded polytope)."""
    c = Y.shape[0]
    res = linprog(-a, A_ub=np.vstack([Y, -Y]), b_ub=np.ones(2 * c), bounds=[(None, None)] * Y.shape[1],
                  method="highs")
    if res.status == 3:
        return np.inf
    if res.status != 0:
        raise SynthesisFailed(f"support LP failed: {res.message}")
    return -float(res.fun)


def contraction_factor(Y, A) -> float:
    """Smallest lambda with ||Y A x||_inf <= lambda ||Y x||_inf for all x."""
    YA = np.asarray(Y) @ np.asarray(A)
    return max((max(_support(Y, r), _support(Y, -r)) for r in YA), default=0.0)


def reduce_rows(Y, tol: float = 1e-9) -> np.ndarray:
    """Drop rows that do not shape the polytope ||Y x||_inf <= 1."""
    Y = np.asarray(Y, dtype=float)
    keep = list(range(Y.shape[0]))
    # zero rows and exact duplicates up to sign first
    uniq = []
    for i in keep:
        r = Y[i]
        if not np.any(r):
            continue
        if any(np.allclose(r, s, atol=1e-12) or np.allclose(r, -s, atol=1e-12) for s in (Y[j] for j in uniq)):
            continue
        uniq.append(i)
    keep = uniq
    i = len(keep) - 1
    while i >= 0:
        rest = [k for k in keep if k != keep[i]]
        if rest and numerical_rank(Y[rest]) == Y.shape[1]:
            r = Y[keep[i]]
            if max(_support(Y[rest], r), _support(Y[rest], -r)) <= 1 + tol:
                keep = rest
        i -= 1
    return Y[keep]


def synthesize_Y(A, gamma: float, opts: SynthOpts | None = None) -> LyapunovCertificate:
    """Row augmentation Y <- reduce([Y; Y A / theta_t]) until Y is theta_t-contractive.

    The result is scaled to ||Y||_inf = 1, so theta = 1 - gamma, and verified to
    satisfy ||Y A||_inf <= theta.
    """
    opts = opts or SynthOpts()
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if not 0 < gamma < 1:
        raise SynthesisFailed("gamma must lie in (0, 1) for a unit-norm certificate")
    theta_t = opts.theta_target if opts.theta_target is not None else 1.0 - 1.01 * gamma
    if not 0 < theta_t <= 1 - gamma:
        raise SynthesisFailed(f"target contraction {theta_t} must lie in (0, 1 - gamma]")
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    if rho >= theta_t:
        raise SynthesisFailed(f"spectral radius {rho:.6g} is not below the target contraction {theta_t:.6g}")
    Y = np.eye(n) if opts.Y0 is None else np.atleast_2d(np.asarray(opts.Y0, dtype=float))
    if numerical_rank(Y) < n:
        raise SynthesisFailed("initial Y must have full column rank")
    Y = reduce_rows(Y, opts.lp_tol)
    for _ in range(opts.max_iters):
        new = Y @ A / theta_t
        grow = [r for r in new if max(_support(Y, r), _support(Y, -r)) > 1 + opts.lp_tol]
        if not grow:
            break
        Y = reduce_rows(np.vstack([Y, grow]), opts.lp_tol)
        if Y.shape[0] > opts.max_rows:
            raise SynthesisFailed(f"row count exceeded {opts.max_rows}")
    else:
        if contraction_factor(Y, A) > theta_t * (1 + opts.lp_tol):
            raise SynthesisFailed(f"no contractive Y after {opts.max_iters} rounds")
    Y = Y / inf_norm(Y)
    cert = check_theorem1(Y, gamma)
    if not isinstance(cert, LyapunovCertificate):
        raise SynthesisFailed("; ".join(cert.violations))
    if inf_norm(Y @ A) > cert.theta + 1e-9:
        raise SynthesisFailed("post-check ||Y A||_inf <= theta failed")
    return cert


# ---------------------------------------------------------------- diagnostics


@dataclass
class DecreaseReport:
    decrease_ok: np.ndarray
    margins: np.ndarray
    envelope_ok: np.ndarray | None
    tol: float

    @property
    def all_ok(self) -> bool:
        ok = bool(np.all(self.decrease_ok))
        if self.envelope_ok is not None:
            ok = ok and bool(np.all(self.envelope_ok))
        return ok

    @property
    def pass_rate(self) -> float:
        return float(np.mean(self.decrease_ok)) if self.decrease_ok.size else 1.0


def _states(log) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(log, "x", log), dtype=float))


def check_decrease_trajectory(log, cert: LyapunovCertificate, tol: float = TRAJ_TOL) -> DecreaseReport:
    """Per-step V(x+) <= V(x) - gamma ||x|| + tol; plus theta^t envelope when Y = I."""
    X = _states(log)
    if X.shape[1] != cert.n:
        X = X.reshape(-1, cert.n)
    if X.shape[0] < 2:
        raise ValueError("need at least two states")
    V = v_eval(cert, X)
    nx = np.abs(X).max(axis=1)
    margins = V[:-1] - cert.gamma * nx[:-1] - V[1:]
    env = None
    if cert.is_identity:
        t = np.arange(X.shape[0])
        env = V <= cert.theta ** t * V[0] + tol
    return DecreaseReport(margins >= -tol, margins, env, tol)


@dataclass
class EnvelopeFit:
    alpha: float
    beta: float
    t0: int


@dataclass
class NoEnvelope:
    reason: str

    def __bool__(self):
        return False


def fit_envelope(log, t0: int | None = None, alpha_max: float = 1.0, resolution: float = 1e-3):
    """Smallest grid beta < 1 with ||x(t)|| <= alpha beta^(t-t0) ||x(t0)|| for some alpha <= alpha_max.

    By default t0 is the time of the largest logged norm, so alpha_max = 1
    measures the decay rate after the transient peak.
    """
    X = _states(log)
    norms = np.abs(X).max(axis=1)
    if t0 is None:
        t0 = int(np.argmax(norms))
    norms = norms[t0:]
    if norms[0] == 0:
        raise ValueError("state at t0 is zero")
    r = norms / norms[0]
    k = np.arange(r.size)
    betas = np.arange(1, round(1 / resolution)) * resolution
    with np.errstate(divide="ignore"):
        logr = np.log(r)
    # log alpha(beta) = max_k (log r_k - k log beta)
    log_alpha = np.max(logr[None, :] - k[None, :] * np.log(betas)[:, None], axis=1)
    ok = np.flatnonzero(log_alpha <= np.log(alpha_max) + 1e-12)
    if not ok.size:
        return NoEnvelope(f"beta >= 1 needed for alpha <= {alpha_max}")
    i = ok[0]
    return EnvelopeFit(float(np.exp(log_alpha[i])), float(betas[i]), t0)
