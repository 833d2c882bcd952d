"""Command-line front end.

Exit codes: 0 success, 1 infeasible or failed run, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import lyapunov, mpc, suspension
from .lyapunov import LyapunovCertificate, SynthesisFailed, SynthOpts, synthesize_Y
from .miqp import MiqpProblem, SolverOpts, brute_force, solve
from .mld import Infeasible, MldModel, validate

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc})") from None


def _model(args) -> MldModel:
    if getattr(args, "model", None):
        try:
            model = MldModel.from_json(_load_json(args.model))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.model}: {exc}") from None
        report = validate(model)
        if report:
            raise UsageError("; ".join(report))
        return model
    return suspension.build_mld(suspension.SuspensionParams())


def _certificate(args, model: MldModel) -> LyapunovCertificate:
    if args.y_source == "file":
        if not args.y_file:
            raise UsageError("--y-file is required with --y-source file")
        try:
            data = _load_json(args.y_file)
            if args.gamma is not None:
                data["gamma"] = args.gamma
            return LyapunovCertificate.from_json(data)
        except (KeyError, ValueError) as exc:
            raise UsageError(f"{args.y_file}: {exc}") from None
    if args.y_source == "synthesized":
        cfg = suspension.ExperimentConfig(y_source="synthesized", gamma=args.gamma)
        return suspension.make_certificate(cfg, model)
    gamma = 0.01 if args.gamma is None else args.gamma
    cert = lyapunov.check_theorem1(np.eye(model.n), gamma)
    if not isinstance(cert, LyapunovCertificate):
        raise UsageError("; ".join(cert.violations))
    return cert


def _spec(args, model: MldModel) -> mpc.ControllerSpec:
    if getattr(args, "controller", None):
        try:
            return mpc.ControllerSpec.from_json(_load_json(args.controller))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"{args.controller}: {exc}") from None
    variant = mpc.ALIASES.get(args.variant, args.variant)
    cert = None if variant == mpc.TERMINAL else _certificate(args, model)
    Q4 = np.eye(model.n)
    return mpc.ControllerSpec(variant=variant, N=args.N, Q1=1.0, Q4=Q4, certificate=cert)


def _add_controller_flags(p):
    p.add_argument("--model", help="model JSON (default: suspension preset)")
    p.add_argument("--controller", help="controller JSON; overrides the flags below")
    p.add_argument("--variant", default=mpc.LYAP_OPTIMAL, choices=list(mpc.VARIANTS) + list(mpc.ALIASES))
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--gamma", type=float)
    p.add_argument("--y-source", default="identity", choices=("identity", "synthesized", "file"))
    p.add_argument("--y-file")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    model = _model(args)
    spec = _spec(args, model)
    x0 = np.array(_floats(args.x0)) if args.x0 else np.array(suspension.X0)
    if x0.size != model.n:
        raise UsageError(f"x0 has {x0.size} entries, model has {model.n} states")
    log = mpc.run_rhc(spec, model, x0, args.T)
    cfg = suspension.ExperimentConfig(variant=spec.variant, x0=tuple(x0), T=args.T, N=spec.N)
    res = suspension.BenchmarkResult(cfg, log, spec)
    summary = res.summary()
    if log.failed_at == 0:
        summary["note"] = "step-0 problem infeasible"
    files = suspension.write_outputs(log, args.out, summary)
    print(json.dumps(summary, indent=1))
    print("wrote " + ", ".join(sorted(Path(f).name for f in files.values())))
    return EXIT_OK if summary["completed"] else EXIT_FAIL


def cmd_synth_y(args) -> int:
    model = _model(args)
    A = model.A
    if args.reference_loop:
        _, A = suspension.reference_damping_loop(model, suspension.SuspensionParams())
    try:
        cert = synthesize_Y(A, args.gamma, SynthOpts(max_iters=args.max_iters))
    except SynthesisFailed as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    Path(args.out).write_text(json.dumps(cert.to_json(), indent=1))
    print(f"||Y||_inf = {lyapunov.inf_norm(cert.Y):.6g}, theta = {cert.theta:.6g}, rows = {cert.rows}")
    return EXIT_OK


def _random_problem(rng) -> MiqpProblem:
    nc = int(rng.integers(0, 7))
    nb = int(rng.integers(1, 9))
    d = nc + nb
    M = rng.normal(size=(d, int(rng.integers(1, d + 1))))
    H = M @ M.T if rng.random() < 0.8 else np.zeros((d, d))
    f = 3 * rng.normal(size=d)
    r = int(rng.integers(1, 2 * d + 1))
    Phi = rng.normal(size=(r, d))
    point = np.concatenate([rng.uniform(-2, 2, nc), rng.integers(0, 2, nb).astype(float)])
    phi = Phi @ point + rng.uniform(0, 1, r)
    if rng.random() < 0.1:
        phi -= rng.uniform(0, 3, r)  # some instances are infeasible
    lb = np.concatenate([np.full(nc, -5.0), np.zeros(nb)])
    ub = np.concatenate([np.full(nc, 5.0), np.ones(nb)])
    return MiqpProblem(H, f, Phi, phi, tuple(range(nc, d)), lb, ub)


def random_suite(seed: int, count: int) -> list[MiqpProblem]:
    rng = np.random.default_rng(seed)
    return [_random_problem(rng) for _ in range(count)]


def agrees(a, b, tol: float = 1e-6) -> bool:
    if a.status != b.status:
        return False
    if a.U is None:
        return True
    return bool(abs(a.J - b.J) <= tol)


def cmd_solve_miqp(args) -> int:
    opts = SolverOpts(mode=args.mode)
    if args.random:
        probs = random_suite(args.seed, args.random)
        ok = 0
        for p in probs:
            s = solve(p, opts)
            ok += agrees(s, brute_force(p)) if args.oracle else s.feasible
        label = "agree" if args.oracle else "feasible"
        print(f"{label}: {ok}/{len(probs)}")
        return EXIT_OK if (ok == len(probs) or not args.oracle) else EXIT_FAIL
    if not args.problem:
        raise UsageError("give a problem file or --random COUNT")
    try:
        prob = MiqpProblem.from_json(_load_json(args.problem))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{args.problem}: {exc}") from None
    errors = prob.validate()
    if errors:
        raise UsageError("; ".join(errors))
    sol = solve(prob, opts)
    out = {
        "status": sol.status,
        "J": None if sol.U is None else sol.J,
        "U": None if sol.U is None else sol.U.tolist(),
        "stats": {"nodes": sol.stats.nodes, "qp_solves": sol.stats.qp_solves, "wall_time": sol.stats.wall_time},
    }
    if args.oracle:
        ref = brute_force(prob)
        out["oracle"] = {"status": ref.status, "J": None if ref.U is None else ref.J, "agree": agrees(sol, ref)}
    text = json.dumps(out, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK if sol.feasible else EXIT_FAIL


def bench_configs(T: int) -> list[suspension.ExperimentConfig]:
    return [
        suspension.ExperimentConfig(variant=mpc.LYAP_OPTIMAL, N=1, T=T),
        suspension.ExperimentConfig(variant=mpc.LYAP_OPTIMAL, N=5, T=T),
        suspension.ExperimentConfig(variant=mpc.LYAP_FEASIBLE, N=5, T=T),
        suspension.ExperimentConfig(variant=mpc.TERMINAL, N=5, T=T),
    ]


TABLE_COLUMNS = ("name", "completed", "failed_at", "settling_time", "final_norm", "median_ms", "max_ms",
                 "total_nodes", "N_star")


def cmd_bench(args) -> int:
    if args.preset != "suspension":
        raise UsageError(f"unknown preset {args.preset!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = suspension.build_mld(suspension.SuspensionParams())
    configs = bench_configs(args.T)
    results = [suspension.run_benchmark(c, out / c.label.replace(" ", "_").replace("=", ""), model)
               for c in configs]
    scan = suspension.terminal_scan(model=model, N_max=args.N_max)
    rows = suspension.compare_variants(configs, scan, results)
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    lines = ["| " + " | ".join(TABLE_COLUMNS) + " |", "|" + "---|" * len(TABLE_COLUMNS)]
    for r in rows:
        lines.append("| " + " | ".join("" if r.get(k) is None else str(r.get(k)) for k in TABLE_COLUMNS) + " |")
    table = "\n".join(lines)
    (out / "comparison.md").write_text(table + "\n")
    print(table)
    print(f"terminal scan: N* = {scan.N_star}")
    diag = scan.diagnostic()
    if diag:
        print(diag)
    mandatory = [r for r in results if r.spec.variant != mpc.TERMINAL]
    return EXIT_OK if all(r.summary()["completed"] for r in mandatory) and scan.N_star else EXIT_FAIL


def _grid(spec_text: str, base: np.ndarray):
    """'x3:-0.2:0.2:9,x4:-0.2:0.2:9' -> list of states."""
    axes = []
    for part in spec_text.split(","):
        try:
            name, lo, hi, count = part.split(":")
            idx = int(name.lstrip("x")) - 1
            axes.append((idx, np.linspace(float(lo), float(hi), int(count))))
        except ValueError:
            raise UsageError(f"bad grid axis {part!r}; expected xI:LO:HI:COUNT") from None
        if not 0 <= idx < base.size or not np.isfinite([float(lo), float(hi)]).all():
            raise UsageError(f"bad grid axis {part!r}")
    pts = []
    for values in np.array(np.meshgrid(*[a[1] for a in axes], indexing="ij")).reshape(len(axes), -1).T:
        x = base.copy()
        for (idx, _), v in zip(axes, values):
            x[idx] = v
        pts.append(x)
    return pts


def probe_region(spec: mpc.ControllerSpec, model: MldModel, points, full_run: int = 0) -> list[dict]:
    ctrl = mpc.Controller(spec, model)
    rows = []
    for x in points:
        try:
            ctrl.step(x)
            ok = True
        except (Infeasible, mpc.StepFailed):
            ok = False
        row = {**{f"x{i + 1}": float(v) for i, v in enumerate(x)}, "feasible": int(ok)}
        if full_run:
            row["recursive"] = int(ok and mpc.run_rhc(spec, model, x, full_run).completed)
        rows.append(row)
    return rows


def cmd_probe_region(args) -> int:
    model = _model(args)
    spec = _spec(args, model)
    base = np.array(_floats(args.base)) if args.base else np.zeros(model.n)
    if base.size != model.n:
        raise UsageError("base state has the wrong length")
    rows = probe_region(spec, model, _grid(args.grid, base), args.full_run)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"feasible: {sum(r['feasible'] for r in rows)}/{len(rows)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mldmpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="closed-loop receding-horizon run")
    _add_controller_flags(p)
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--T", type=int, default=600)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth-y", help="synthesize an infinity-norm Lyapunov matrix")
    p.add_argument("--model")
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--reference-loop", action="store_true",
                   help="suspension preset: use the passive linear damper loop instead of the open loop")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_y)

    p = sub.add_parser("solve-miqp", help="one-shot MIQP solve")
    p.add_argument("problem", nargs="?")
    p.add_argument("--mode", default="optimal", choices=("optimal", "first_feasible"))
    p.add_argument("--oracle", action="store_true", help="compare with brute-force enumeration")
    p.add_argument("--random", type=int, metavar="COUNT", help="solve a seeded random suite instead")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve_miqp)

    p = sub.add_parser("bench", help="suspension benchmark and variant comparison")
    p.add_argument("--preset", default="suspension")
    p.add_argument("--compare", action="store_true", help="emit the comparison table (always on)")
    p.add_argument("--T", type=int, default=600)
    p.add_argument("--N-max", type=int, default=40)
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("probe-region", help="grid estimate of the feasible initial-state region")
    _add_controller_flags(p)
    p.add_argument("--grid", default="x3:-0.2:0.2:9,x4:-0.2:0.2:9")
    p.add_argument("--base", help="state used for coordinates not on the grid")
    p.add_argument("--full-run", type=int, default=0, metavar="T")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe_region)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
