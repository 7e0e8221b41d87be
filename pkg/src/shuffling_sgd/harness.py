"""Experiment runner: config resolution, repeated runs, grid search and the
epochs-vs-accuracy scaling study.

Config schema (JSON)::

    {
      "problem": {...} | "path/to/problem.json",
      "scheme": "rr", "seed": 0, "repeat": 1,
      "schedule": {"kind": "constant", "eta": 0.5}
                | {"kind": "theorem", "epsilon": .., "D": .., "lam": .., "C1": ..}
                | {"kind": "theorem", "eps_hat": .., "D": 1.0, "P": 0.0},
      "T": 200, "eps_hat": null,
      "w0": null, "out": "runs", "full_trace": false
    }

``schedule.eps_hat`` derives the plan from the problem's analytic constants
(N = 0, gamma = 1/L^2). ``T`` defaults to the plan's T for theorem schedules.
A top-level ``eps_hat`` stops each run once the start gap reaches it.
"""

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .optimizer import DivergenceError, run
from .problems import ContractViolation, problem_from_dict
from .schedule import (
    ConstantSchedule,
    compute_constants,
    plan_for_target,
    plan_schedule,
    step_cap,
)
from .shuffling import ShufflingScheme
from .traces import dump_json, read_trace_csv, write_trace

DEFAULT_GRID = (1e-4, 1e-3, 1e-2, 0.1, 1.0)
PROBE_EPOCHS = 100
MAX_SCALING_EPOCHS = 1_000_000
SUMMARY_COLUMNS = ("F", "gap", "avg_sq_grad", "dist_sq_to_wstar")


class ConfigError(ContractViolation):
    pass


@dataclass
class ExperimentConfig:
    problem: dict
    scheme: str = "rr"
    seed: int = 0
    schedule: dict = field(default_factory=dict)
    T: Optional[int] = None
    eps_hat: Optional[float] = None
    out: str = "runs"
    repeat: int = 1
    full_trace: bool = False
    w0: Optional[list] = None

    @classmethod
    def from_dict(cls, doc, base_dir=None):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "problem" not in doc:
            raise ConfigError("config needs a 'problem' entry")
        doc = dict(doc)
        prob = doc["problem"]
        if isinstance(prob, str):
            path = Path(prob)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                doc["problem"] = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read problem file {path}: {exc}") from None
        return cls(**doc)

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def load_config(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


@dataclass
class Resolved:
    problem: object
    schedule: object
    T: int
    w0: np.ndarray
    scheme: ShufflingScheme
    stop_gap: Optional[float]
    corollary: object = None


def _initial_point(problem, w0):
    if w0 is None:
        return problem.initial_point()
    return problem.check_weights(np.asarray(w0, dtype=np.float64))


def build_schedule(problem, doc, w0):
    """Schedule object from its JSON description; returns ``(schedule, corollary)``."""
    truth = problem.truth
    cap = None
    if truth.smoothness is not None and truth.star_smooth_M is not None:
        cap = step_cap(problem.n, truth.smoothness, truth.star_smooth_M)
    kind = doc.get("kind")
    if kind == "constant":
        if "eta" not in doc:
            raise ConfigError("constant schedule needs 'eta'")
        return ConstantSchedule(float(doc["eta"]), cap), None
    if kind != "theorem":
        raise ConfigError(f"schedule kind must be 'constant' or 'theorem', got {kind!r}")
    if "eps_hat" in doc:
        if truth.w_star is None or truth.pl_constant is None or cap is None:
            raise ConfigError("eps_hat schedules need analytic w*, L, mu and M")
        ledger = compute_constants(truth.smoothness, truth.pl_constant, truth.star_smooth_M, float(doc.get("N", 0.0)))
        dist0 = float(np.sum((w0 - truth.w_star) ** 2))
        return plan_for_target(ledger, problem.n, float(doc.get("D", 1.0)), dist0, float(doc["eps_hat"]),
                               float(doc.get("P", 0.0)))
    missing = [k for k in ("epsilon", "D", "lam", "C1") if k not in doc]
    if missing:
        raise ConfigError(f"theorem schedule is missing {missing}")
    plan = plan_schedule(float(doc["epsilon"]), float(doc["D"]), float(doc["lam"]), float(doc["C1"]),
                         doc.get("cap", cap))
    return plan, None


def resolve(config):
    """Turn a config into a runnable (problem, schedule, scheme) triple; raises ConfigError."""
    try:
        problem = problem_from_dict(config.problem)
        w0 = _initial_point(problem, config.w0)
        schedule, cor = build_schedule(problem, config.schedule, w0)
        scheme = ShufflingScheme(config.scheme, int(config.seed))
    except ConfigError:
        raise
    except (ContractViolation, KeyError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    T = config.T if config.T is not None else getattr(schedule, "T", None)
    if T is None:
        raise ConfigError("T must be given for a constant schedule")
    if int(T) < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if getattr(schedule, "T", None) is not None and T > schedule.T:
        raise ConfigError(f"T = {T} exceeds the schedule's horizon {schedule.T}")
    if config.repeat < 1:
        raise ConfigError("repeat must be >= 1")
    return Resolved(problem, schedule, int(T), w0, scheme, config.eps_hat, cor)


class Manifest:
    """Append-only JSON-lines record of the files a command wrote."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def add(self, **entry):
        with self._lock, open(self.path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _out_dir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def summarize(datas):
    """Per-epoch mean and sample std across runs, truncated to the shortest run.

    Returns ``(header, rows)``; also tracks the min-so-far gap.
    """
    from .optimizer import COLUMNS

    m = min(d.shape[0] for d in datas)
    header = ["t", "runs"]
    cols = [datas[0][:m, 0]]
    stacks = {}
    for name in SUMMARY_COLUMNS:
        stacks[name] = np.stack([d[:m, COLUMNS.index(name)] for d in datas])
    stacks["min_gap"] = np.minimum.accumulate(stacks["gap"], axis=1)
    for name, s in stacks.items():
        header += [f"mean_{name}", f"std_{name}"]
        cols.append(s.mean(axis=0))
        cols.append(s.std(axis=0, ddof=1) if len(datas) > 1 else np.zeros(m))
    rows = np.column_stack([cols[0], np.full(m, len(datas))] + cols[1:])
    return header, rows


def write_summary(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([str(int(r[0])), str(int(r[1]))] + ["nan" if math.isnan(x) else repr(float(x)) for x in r[2:]])


def read_summary(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    return header, rows


@dataclass
class RunResult:
    traces: list
    files: list
    summary: Path


def cmd_run(config):
    """``repeat`` runs with seeds ``seed, seed+1, ...``; per-run traces plus ``summary.csv``."""
    res = resolve(config)
    out = _out_dir(config.out)
    manifest = Manifest(out / "manifest.jsonl")
    traces, files = [], []
    for r in range(config.repeat):
        seed = int(config.seed) + r
        scheme = ShufflingScheme(res.scheme.kind, seed)
        trace = run(res.problem, res.w0, res.schedule, scheme, res.T,
                    full_trace=config.full_trace, stop_gap=res.stop_gap)
        path = write_trace(trace, out / f"run_{scheme.kind}_seed{seed}")
        manifest.add(kind="trace", file=path.name, seed=seed, epochs=len(trace))
        traces.append(trace)
        files.append(path)
    header, rows = summarize([t.data for t in traces])
    summary = out / "summary.csv"
    write_summary(summary, header, rows)
    manifest.add(kind="summary", file=summary.name, runs=len(traces))
    dump_json(config.to_dict(), out / "config.json")
    return RunResult(traces, files, summary)


def summary_from_files(paths):
    return summarize([read_trace_csv(p) for p in paths])


@dataclass
class GridResult:
    best_eta: Optional[float]
    table: list

    def to_dict(self):
        return {"best_eta": self.best_eta, "table": self.table}


def cmd_grid_search(config, eta_grid=DEFAULT_GRID, epochs=PROBE_EPOCHS):
    """Run each constant step for ``epochs`` epochs and rank by final objective."""
    if len(eta_grid) == 0:
        raise ConfigError("eta grid is empty")
    try:
        problem = problem_from_dict(config.problem)
        w0 = _initial_point(problem, config.w0)
        scheme = ShufflingScheme(config.scheme, int(config.seed))
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    table = []
    for eta in eta_grid:
        try:
            trace = run(problem, w0, ConstantSchedule(float(eta)), scheme, epochs)
            table.append({"eta": float(eta), "final_F": trace.final_objective, "status": "ok"})
        except DivergenceError as exc:
            table.append({"eta": float(eta), "final_F": None, "status": f"diverged ({exc})"})
    ok = [row for row in table if row["status"] == "ok" and math.isfinite(row["final_F"])]
    best = min(ok, key=lambda row: row["final_F"])["eta"] if ok else None
    return GridResult(best, table)


@dataclass
class ScalingResult:
    eps_hats: list
    epochs: list
    censored: list
    slope: float
    intercept: float
    residuals: list

    def to_dict(self):
        return {
            "points": [
                {"eps_hat": e, "epochs": k, "censored": c}
                for e, k, c in zip(self.eps_hats, self.epochs, self.censored)
            ],
            "slope": self.slope,
            "intercept": self.intercept,
            "residuals": self.residuals,
        }


def fit_scaling(eps_hats, epochs):
    """Least-squares line through ``(log(1/eps_hat), log(epochs))``; needs >= 3 points."""
    x = -np.log(np.asarray(eps_hats, dtype=np.float64))
    y = np.log(np.asarray(epochs, dtype=np.float64))
    if x.size < 3:
        raise ConfigError(f"scaling fit needs at least 3 points, got {x.size}")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(intercept), resid.tolist()


def epochs_to_reach(problem, w0, schedule, scheme, eps_hat, max_epochs=MAX_SCALING_EPOCHS):
    """First epoch ``t`` whose start point has gap ``<= eps_hat``, or None if not reached."""
    T = max_epochs if getattr(schedule, "T", None) is None else min(max_epochs, schedule.T)
    trace = run(problem, w0, schedule, scheme, T, stop_gap=eps_hat)
    return trace.reached_at


def cmd_scaling(config, eps_hats, family="theorem", max_epochs=MAX_SCALING_EPOCHS):
    """Epochs needed for each target gap and the fitted log-log slope.

    ``family="theorem"`` plans a schedule per target from the problem's
    constants (``config.schedule`` may supply ``D``, ``P``, ``N``);
    ``"constant"`` reuses ``config.schedule`` for every target.
    """
    if len(eps_hats) < 3:
        raise ConfigError(f"scaling needs at least 3 target gaps, got {len(eps_hats)}")
    try:
        problem = problem_from_dict(config.problem)
        w0 = _initial_point(problem, config.w0)
        scheme = ShufflingScheme(config.scheme, int(config.seed))
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    if problem.truth.f_star is None:
        raise ConfigError("scaling needs a problem with known F*")
    counts, censored = [], []
    for eh in eps_hats:
        if family == "theorem":
            doc = {"kind": "theorem", **{k: v for k, v in config.schedule.items() if k in ("D", "P", "N")},
                   "eps_hat": float(eh)}
        elif family == "constant":
            doc = config.schedule
        else:
            raise ConfigError(f"unknown schedule family {family!r}")
        try:
            schedule, _ = build_schedule(problem, doc, w0)
        except ContractViolation as exc:
            raise ConfigError(str(exc)) from None
        reached = epochs_to_reach(problem, w0, schedule, scheme, float(eh), max_epochs)
        counts.append(reached if reached is not None else None)
        censored.append(reached is None)
    used = [(e, k) for e, k, c in zip(eps_hats, counts, censored) if not c]
    if len(used) < 3:
        raise ConfigError(f"only {len(used)} uncensored points; cannot fit")
    slope, intercept, resid = fit_scaling([e for e, _ in used], [k for _, k in used])
    return ScalingResult(list(map(float, eps_hats)), counts, censored, slope, intercept, resid)


def write_scaling(result, out):
    out = _out_dir(out)
    with open(out / "scaling.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps_hat", "epochs", "censored"])
        for e, k, c in zip(result.eps_hats, result.epochs, result.censored):
            w.writerow([repr(e), "" if k is None else str(k), str(int(c))])
    dump_json(result.to_dict(), out / "scaling.json")
    return out / "scaling.csv"
