"""Quarter-car semi-active suspension as an MLD benchmark.

States: x1 wheel deflection, x2 unsprung velocity, x3 suspension deflection,
x4 sprung velocity. Input: normalized damper force fbar. With v = x4 - x2 the
damper is passive and bounded:

    fbar * v >= 0,    |fbar| <= sigma,    fbar * v <= c v^2,   c = 2 zeta_max w_s

The nonconvex set is encoded with binaries d1 <-> [v >= 0], d2 <-> [fbar >= 0],
d1 = d2, and a piecewise auxiliary F >= 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import lyapunov, mpc
from .logic import (
    Box,
    LinExpr,
    VarTable,
    assemble,
    encode_iff_binary,
    encode_iff_threshold,
    encode_le,
    encode_piecewise,
)
from .lyapunov import LyapunovCertificate, SynthOpts, check_theorem1, inf_norm, synthesize_Y
from .miqp import SolverOpts
from .mld import EquilibriumPair, Infeasible, MldModel, check_equilibrium, step, validate

X0 = (0.0, 0.0, 0.1, 0.0)
SETTLE_TOL = 1e-3


@dataclass(frozen=True)
class SuspensionParams:
    Ts: float = 0.009
    f_s: float = 1.5
    f_us: float = 9.0
    rho: float = 10.0
    zeta: float = 0.0
    zeta_max: float = 2.25
    sigma: float = 0.2
    N: int = 5
    x_box: float = 10.0
    hz_to_rad: bool = True
    # natural frequency in the (2,1) entry: "us" or "s"
    omega21: str = "us"
    # (2,4) entry scaled by zeta like its mirror (2,2); False gives 2 rho w_s
    a24_damped: bool = True
    eps: float = 1e-6

    def __post_init__(self):
        if min(self.f_s, self.f_us) <= 0 or self.Ts <= 0 or self.sigma <= 0:
            raise ValueError("frequencies, Ts and sigma must be positive")
        if not 0 <= self.zeta < self.zeta_max:
            raise ValueError("need 0 <= zeta < zeta_max")
        if self.omega21 not in ("us", "s"):
            raise ValueError("omega21 must be 'us' or 's'")
        if self.x_box <= 0:
            raise ValueError("x_box must be positive")

    @property
    def w_s(self) -> float:
        return (2 * math.pi if self.hz_to_rad else 1.0) * self.f_s

    @property
    def w_us(self) -> float:
        return (2 * math.pi if self.hz_to_rad else 1.0) * self.f_us

    @property
    def c_max(self) -> float:
        return 2 * self.zeta_max * self.w_s

    def describe(self) -> str:
        return (f"Ts={self.Ts}, f_s={self.f_s} Hz, f_us={self.f_us} Hz, rho={self.rho}, zeta={self.zeta}, "
                f"zeta_max={self.zeta_max}, sigma={self.sigma}, "
                f"{'w=2*pi*f' if self.hz_to_rad else 'w=f (no Hz conversion)'}, "
                f"a21=-w_{self.omega21}^2, a24={'2*rho*zeta*w_s' if self.a24_damped else '2*rho*w_s'}, "
                f"state box +-{self.x_box}")


def build_continuous(params: SuspensionParams) -> tuple[np.ndarray, np.ndarray]:
    ws, rho, z = params.w_s, params.rho, params.zeta
    w21 = params.w_us if params.omega21 == "us" else params.w_s
    a24 = 2 * rho * z * ws if params.a24_damped else 2 * rho * ws
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-w21 ** 2, -2 * rho * z * ws, rho * ws ** 2, a24],
        [0.0, -1.0, 0.0, 1.0],
        [0.0, 2 * z * ws, -ws ** 2, -2 * z * ws],
    ])
    B = np.array([[0.0], [rho], [0.0], [-1.0]])
    return A, B


def discretize(A, B, Ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order hold: exp([[A, B], [0, 0]] Ts) = [[Ad, Bd], [0, I]]."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = expm(M * Ts)
    return E[:n, :n], E[:n, n:]


def build_mld(params: SuspensionParams) -> MldModel:
    t = VarTable()
    xs = [t.state(f"x{i}") for i in range(1, 5)]
    f = t.input("fbar")
    t.delta("d1")
    t.delta("d2")
    t.aux("F")
    box = Box()
    for x in xs:
        box.set(x, -params.x_box, params.x_box)
    box.set(f, -params.sigma, params.sigma)
    v = LinExpr.var("x4") - LinExpr.var("x2")
    fv = LinExpr.var(f)
    c = params.c_max
    systems = [
        encode_iff_threshold(t, "d1", v, box, params.eps),
        encode_iff_threshold(t, "d2", fv, box, params.eps),
        encode_iff_binary(t, "d1", "d2"),
        encode_piecewise(t, "F", "d1", fv - c * v, -fv + c * v, box),
        encode_le(t, -LinExpr.var("F")),
        encode_le(t, fv - params.sigma),
        encode_le(t, -fv - params.sigma),
    ]
    # the big-M constants are only valid inside the state box
    for x in xs:
        systems.append(encode_le(t, LinExpr.var(x) - params.x_box))
        systems.append(encode_le(t, -LinExpr.var(x) - params.x_box))
    E = assemble(systems, t)
    if E.x_names != xs or E.u_names != [f]:
        raise AssertionError("unexpected column order")
    Ad, Bd = discretize(*build_continuous(params), params.Ts)
    rl, rc = len(E.delta_names), len(E.z_names)
    model = MldModel.build(
        Ad, Bd, C=np.eye(4), E1=E.E1, E2=E.E2, E3=E.E3, E4=E.E4, E5=E.E5, r_l=rl, r_c=rc,
        names={"x": xs, "u": [f], "delta": E.delta_names, "z": E.z_names},
    )
    report = validate(model)
    if report:
        raise ValueError("; ".join(report))
    return model


def direct_feasible(params: SuspensionParams, x, fbar, tol: float = 0.0) -> bool:
    """Passivity, saturation and damping bound checked on the raw inequalities.

    Strict signs follow the encoding convention: v < 0 means v <= -eps.
    """
    v = float(x[3] - x[1])
    eps = params.eps
    if abs(fbar) > params.sigma + tol:
        return False
    if np.max(np.abs(x)) > params.x_box + tol:
        return False
    if -eps < v < 0 or -eps < fbar < 0:
        return False
    if (v >= 0) != (fbar >= 0):
        return False
    if fbar * v < -tol:
        return False
    return fbar * v <= params.c_max * v * v + tol


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentConfig:
    variant: str = mpc.LYAP_OPTIMAL
    x0: tuple = X0
    T: int = 600
    N: int = 5
    Q1: object = 1.0
    Q2: object = None
    Q3: object = None
    Q4: object = field(default_factory=lambda: np.eye(4))
    Q5: object = None
    gamma: float | None = None
    y_source: str = "identity"  # identity | synthesized | file
    y_file: str | None = None
    params: SuspensionParams = field(default_factory=SuspensionParams)
    solver: SolverOpts | None = None
    name: str | None = None

    def __post_init__(self):
        self.variant = mpc.ALIASES.get(self.variant, self.variant)
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be finite")
        if self.y_source not in ("identity", "synthesized", "file"):
            raise ValueError(f"unknown Y source {self.y_source!r}")

    @property
    def label(self) -> str:
        return self.name or f"{self.variant} N={self.N}"


def reference_damping_loop(model: MldModel, params: SuspensionParams, grid: int = 200) -> tuple[float, np.ndarray]:
    """Passive linear damper fbar = c_ref v with the smallest closed-loop spectral radius."""
    k = np.zeros((1, 4))
    k[0, 1], k[0, 3] = -1.0, 1.0
    best = (np.inf, 0.0, model.A)
    for c in np.linspace(params.c_max / grid, params.c_max, grid):
        Acl = model.A + model.B1 @ (c * k)
        rho = float(np.max(np.abs(np.linalg.eigvals(Acl))))
        if rho < best[0]:
            best = (rho, float(c), Acl)
    return best[1], best[2]


def make_certificate(cfg: ExperimentConfig, model: MldModel) -> LyapunovCertificate:
    if cfg.y_source == "file":
        data = json.loads(Path(cfg.y_file).read_text())
        Y = np.asarray(data["Y"], dtype=float)
        gamma = cfg.gamma if cfg.gamma is not None else data.get("gamma", 0.01 * inf_norm(Y))
    elif cfg.y_source == "synthesized":
        _, Acl = reference_damping_loop(model, cfg.params)
        gamma = cfg.gamma if cfg.gamma is not None else 0.01
        return synthesize_Y(Acl, gamma, SynthOpts())
    else:
        Y = np.eye(model.n)
        gamma = cfg.gamma if cfg.gamma is not None else 0.01 * inf_norm(Y)
    cert = check_theorem1(Y, gamma)
    if not isinstance(cert, LyapunovCertificate):
        raise ValueError("; ".join(cert.violations))
    return cert


def controller_spec(cfg: ExperimentConfig, model: MldModel, cert: LyapunovCertificate | None = None) -> mpc.ControllerSpec:
    if cert is None and cfg.variant != mpc.TERMINAL:
        cert = make_certificate(cfg, model)
    return mpc.ControllerSpec(variant=cfg.variant, N=cfg.N, Q1=cfg.Q1, Q2=cfg.Q2, Q3=cfg.Q3, Q4=cfg.Q4,
                              Q5=cfg.Q5, certificate=cert, solver=cfg.solver)


def settling_time(log: mpc.ClosedLoopLog, tol: float = SETTLE_TOL) -> int | None:
    """First t after which ||x||_inf stays within tol for the rest of the log."""
    norms = np.abs(log.x).max(axis=1)
    above = np.flatnonzero(norms > tol)
    if not above.size:
        return 0
    t = int(above[-1]) + 1
    return t if t < len(norms) else None


@dataclass
class BenchmarkResult:
    config: ExperimentConfig
    log: mpc.ClosedLoopLog
    spec: mpc.ControllerSpec
    files: dict = field(default_factory=dict)

    def summary(self) -> dict:
        log, cert = self.log, self.spec.certificate
        out = {
            "name": self.config.label,
            "variant": self.spec.variant,
            "N": self.spec.N,
            "steps": log.steps,
            "completed": log.completed and log.steps == self.config.T,
            "failed_at": log.failed_at,
            "settling_time": settling_time(log),
            "final_norm": float(np.abs(log.x[-1]).max()),
            "median_ms": float(np.median(log.ms)) if log.steps else None,
            "max_ms": float(np.max(log.ms)) if log.steps else None,
            "total_nodes": int(log.nodes.sum()),
            "median_nodes": float(np.median(log.nodes)) if log.steps else None,
        }
        if cert is not None and len(log.x) >= 2:
            rep = lyapunov.check_decrease_trajectory(log, cert)
            out["decrease_pass_rate"] = rep.pass_rate
        if len(log.x) >= 2 and np.abs(log.x).max() > 0:
            fit = lyapunov.fit_envelope(log)
            out["beta"] = fit.beta if isinstance(fit, lyapunov.EnvelopeFit) else None
        return out


def write_outputs(log: mpc.ClosedLoopLog, out_dir, summary: dict | None = None) -> dict:
    """trajectory.csv, control.csv, times.csv, log.csv, summary.json and a gnuplot script."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, m, rl, rc = log.x.shape[1], log.u.shape[1], log.delta.shape[1], log.z.shape[1]
    files = {}

    def write(name, header, rows):
        import csv

        path = out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        files[name] = str(path)

    write("trajectory.csv", ["t"] + [f"x{i + 1}" for i in range(n)] + ["V"],
          ([t] + [repr(float(v)) for v in log.x[t]] + [repr(float(log.V[t]))] for t in range(len(log.x))))
    write("control.csv", ["t"] + [f"u{i + 1}" for i in range(m)] + [f"delta{i + 1}" for i in range(rl)]
          + [f"z{i + 1}" for i in range(rc)],
          ([t] + [repr(float(v)) for v in np.concatenate([log.u[t], log.delta[t], log.z[t]])]
           for t in range(log.steps)))
    write("times.csv", ["t", "ms", "nodes", "status"],
          ([t, repr(float(log.ms[t])), int(log.nodes[t]), log.status[t]] for t in range(log.steps)))
    log.to_csv(out / "log.csv")
    files["log.csv"] = str(out / "log.csv")
    if summary is not None:
        (out / "summary.json").write_text(json.dumps(summary, indent=1))
        files["summary.json"] = str(out / "summary.json")
    plot = out / "plot.gp"
    plot.write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set terminal pngcairo size 900,600\n"
        "set output 'states.png'\n"
        "plot " + ", ".join(f"'trajectory.csv' using 1:{i + 2} with lines" for i in range(n)) + "\n"
        "set output 'control.png'\n"
        "plot 'control.csv' using 1:2 with steps\n"
        "set output 'times.png'\n"
        "plot 'times.csv' using 1:2 with impulses\n"
    )
    files["plot.gp"] = str(plot)
    return files


def run_benchmark(config: ExperimentConfig, out_dir=None, model: MldModel | None = None) -> BenchmarkResult:
    model = model or build_mld(config.params)
    spec = controller_spec(config, model)
    log = mpc.run_rhc(spec, model, np.asarray(config.x0, dtype=float), config.T)
    res = BenchmarkResult(config, log, spec)
    if out_dir is not None:
        res.files = write_outputs(log, out_dir, res.summary())
    return res


@dataclass
class ScanResult:
    N_star: int | None
    feasible: dict
    params: SuspensionParams
    band: tuple = (10, 16)

    @property
    def in_band(self) -> bool:
        return self.N_star is not None and self.band[0] <= self.N_star <= self.band[1]

    def diagnostic(self) -> str | None:
        if self.in_band:
            return None
        found = "no feasible horizon" if self.N_star is None else f"N* = {self.N_star}"
        top = max(self.feasible) if self.feasible else 0
        return (f"terminal-equality scan up to N = {top}: {found}, outside [{self.band[0]}, {self.band[1]}]; "
                f"assumption set: {self.params.describe()}")


def terminal_scan(params: SuspensionParams | None = None, x0=X0, N_max: int = 40,
                  model: MldModel | None = None) -> ScanResult:
    """Smallest N at which the terminal-equality problem is feasible at step 0."""
    params = params or SuspensionParams()
    model = model or build_mld(params)
    feasible = {}
    for N in range(1, N_max + 1):
        spec = mpc.ControllerSpec(variant=mpc.TERMINAL, N=N, Q1=1.0, Q4=np.eye(4),
                                  solver=SolverOpts(mode="first_feasible"))
        try:
            mpc.Controller(spec, model).step(np.asarray(x0, dtype=float))
            feasible[N] = True
        except Infeasible:
            feasible[N] = False
        if feasible[N]:
            return ScanResult(N, feasible, params)
    return ScanResult(None, feasible, params)


def compare_variants(configs: list[ExperimentConfig], scan: ScanResult | None = None,
                     results: list[BenchmarkResult] | None = None) -> list[dict]:
    """One summary row per config; terminal rows carry the scan's N*."""
    if len(configs) < 2:
        raise ValueError("need at least two configurations")
    results = results or [run_benchmark(c) for c in configs]
    rows = []
    for r in results:
        row = r.summary()
        if r.spec.variant == mpc.TERMINAL and scan is not None:
            row["N_star"] = scan.N_star
        rows.append(row)
    return rows


def origin_pair(model: MldModel) -> EquilibriumPair:
    """Origin with the auxiliaries the rows assign to it (v = 0 counts as v >= 0)."""
    r = step(model, np.zeros(model.n), np.zeros(model.m))
    return EquilibriumPair(np.zeros(model.n), np.zeros(model.m), r.delta, r.z)


def origin_is_equilibrium(model: MldModel) -> bool:
    return check_equilibrium(model, origin_pair(model))


def params_to_json(params: SuspensionParams) -> dict:
    return asdict(params)


def params_from_json(data: dict | None) -> SuspensionParams:
    return replace(SuspensionParams(), **(data or {}))
