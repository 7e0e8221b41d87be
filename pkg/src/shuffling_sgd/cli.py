"""Command-line interface.

Exit codes: 0 success, 1 config error, 2 divergence, 3 check failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, harness
from .optimizer import DivergenceError
from .problems import ContractViolation, problem_from_dict
from .schedule import plan_schedule, step_cap, verify_eta_recursion
from .traces import TraceFormatError, dump_json, read_trace

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_CHECK = 0, 1, 2, 3


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _config(args):
    cfg = harness.load_config(args.config)
    for key in ("scheme", "seed", "out", "repeat"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "full_trace", False):
        cfg.full_trace = True
    if getattr(args, "epochs", None) is not None:
        cfg.T = args.epochs
    return cfg


def _table(rows, header):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def cmd_run(args):
    cfg = _config(args)
    res = harness.cmd_run(cfg)
    for p, tr in zip(res.files, res.traces):
        gap = tr.column("gap")
        tail = f", min gap = {gap.min():.6e}" if tr.f_star is not None else ""
        print(f"{p}: {len(tr)} epochs, final F = {tr.final_objective:.6e}{tail}")
    print(f"summary: {res.summary}")
    return EXIT_OK


def cmd_grid(args):
    cfg = _config(args)
    grid = args.grid if args.grid else harness.DEFAULT_GRID
    res = harness.cmd_grid_search(cfg, grid, args.epochs or harness.PROBE_EPOCHS)
    rows = [(f"{r['eta']:g}", "-" if r["final_F"] is None else f"{r['final_F']:.6e}", r["status"]) for r in res.table]
    print(_table(rows, ("eta", "final_F", "status")))
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(res.to_dict(), out / "grid.json")
    if res.best_eta is None:
        print("all runs diverged; no winner")
        return EXIT_DIVERGED
    print(f"best eta: {res.best_eta:g}")
    return EXIT_OK


def cmd_scaling(args):
    cfg = _config(args)
    res = harness.cmd_scaling(cfg, args.eps_hats, args.family, args.max_epochs)
    rows = [(f"{e:g}", "-" if k is None else k, "yes" if c else "no")
            for e, k, c in zip(res.eps_hats, res.epochs, res.censored)]
    print(_table(rows, ("eps_hat", "epochs", "censored")))
    print(f"slope = {res.slope:.4f}, intercept = {res.intercept:.4f}")
    harness.write_scaling(res, cfg.out)
    return EXIT_OK


def cmd_diagnose(args):
    trace = read_trace(args.trace)
    if args.problem:
        doc = json.loads(Path(args.problem).read_text())
    elif trace.problem is not None:
        doc = trace.problem
    else:
        raise ContractViolation("no problem given and the trace header has none")
    problem = problem_from_dict(doc)
    if trace.initial_point is None:
        trace.initial_point = problem.initial_point()
        trace.final_point = trace.initial_point
    if not np.isfinite(trace.final_objective):
        trace.final_objective = problem.objective(trace.final_point)
    report = diagnostics.diagnose(problem, trace, L=args.L, mu=args.mu, M=args.M, N=args.N,
                                  rtol=args.rtol, samples=args.samples)
    rows = []
    for name, c in report.checks.items():
        margin = c.get("worst_margin")
        rows.append((name, c.get("status"), c.get("passed", "-"), c.get("checked", "-"),
                     "-" if margin is None else f"{margin:.3e}", c.get("detail", "")))
    print(_table(rows, ("check", "status", "passed", "checked", "worst_margin", "note")))
    print(f"L_hat = {report.L_hat:.6g}, mu_hat = {report.mu_hat}, M_hat = {report.M_hat}, N_hat = {report.N_hat}")
    print(f"sigma*^2 = {report.sigma_star_sq_hat}, F* = {report.F_star} ({report.F_star_source})")
    for w in report.warnings:
        print(f"warning: {w}")
    out = Path(args.out) if args.out else Path(args.trace).with_suffix(".diagnostics.json")
    dump_json(report.to_dict(), out)
    print(f"report: {out}")
    return EXIT_CHECK if report.failures() else EXIT_OK


def cmd_schedule_plan(args):
    cap = args.cap
    if cap is None and args.n is not None and args.L is not None and args.M is not None:
        cap = step_cap(args.n, args.L, args.M)
    plan = plan_schedule(args.eps, args.D, args.lam, args.C1, cap)
    rep = verify_eta_recursion(plan)
    rows = [(k, f"{v:.10g}" if isinstance(v, float) else v) for k, v in plan.to_dict().items()]
    rows += [
        ("bound", f"{plan.bound:.10g}"),
        ("eta_T", f"{plan.eta_at(plan.T):.10g}"),
        ("recursion", "pass" if rep.all_pass else f"fail at t={rep.first_failure}"),
        ("worst_margin", f"{rep.worst_margin:.3e}"),
    ]
    print(_table(rows, ("field", "value")))
    if args.out:
        doc = plan.to_dict()
        doc["recursion"] = {"all_pass": rep.all_pass, "worst_margin": rep.worst_margin,
                            "first_failure": rep.first_failure}
        dump_json(doc, args.out)
    return EXIT_OK if rep.all_pass else EXIT_CHECK


def cmd_gradcheck(args):
    if args.problem:
        doc = json.loads(Path(args.problem).read_text())
    else:
        doc = harness.load_config(args.config).problem
    problem = problem_from_dict(doc)
    err = diagnostics.gradient_check(problem, args.trials, args.h, args.seed)
    print(f"{problem.kind}: max relative error = {err:.3e} over {args.trials} trials (h = {args.h:g})")
    if args.tol is not None and err > args.tol:
        return EXIT_CHECK
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="shuffling-sgd", description="Shuffling-type SGD experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--scheme", choices=["ig", "ss", "rr"])
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--epochs", type=int, help="override T")
        p.set_defaults(func=func)
        return p

    p = experiment("run", cmd_run, "run the optimizer and write traces")
    p.add_argument("--repeat", type=int)
    p.add_argument("--full-trace", action="store_true", help="also store inner iterates (.npz)")

    p = experiment("grid", cmd_grid, "grid search over constant step sizes")
    p.add_argument("--grid", type=_floats, help="comma-separated step sizes")

    p = experiment("scaling", cmd_scaling, "epochs needed per target gap and log-log slope")
    p.add_argument("--eps-hats", type=_floats, default=[1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    p.add_argument("--family", choices=["theorem", "constant"], default="theorem")
    p.add_argument("--max-epochs", type=int, default=harness.MAX_SCALING_EPOCHS)

    p = sub.add_parser("diagnose", help="check assumptions and per-epoch bounds on a trace")
    p.add_argument("--trace", required=True, help="trace CSV written by 'run'")
    p.add_argument("--problem", help="problem JSON (defaults to the one in the trace header)")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--rtol", type=float, default=diagnostics.DEFAULT_RTOL)
    p.add_argument("--samples", type=int, default=1000)
    for name in ("L", "mu", "M", "N"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("schedule-plan", help="print the exponential schedule for given parameters")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--C1", type=float, required=True)
    p.add_argument("--cap", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--L", type=float)
    p.add_argument("--M", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule_plan)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--problem")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractViolation, TraceFormatError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
