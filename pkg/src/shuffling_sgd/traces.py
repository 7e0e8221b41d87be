"""Reading and writing run traces.

A trace is stored as three files sharing a stem:

* ``<stem>.csv``: first line ``# trace-format: 1``, then a header row with the
  column names in :data:`optimizer.COLUMNS`, then one row per epoch. Floats
  are written with ``repr`` so they round-trip exactly; missing values are
  ``nan``.
* ``<stem>.json``: run header (problem spec, scheme, seed, schedule, initial
  and final points, F*).
* ``<stem>.npz``: only for full traces; start points, permutations
  (1-based) and inner iterates.
"""

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .optimizer import COLUMNS, RunTrace

TRACE_FORMAT = 1
_MAGIC = f"# trace-format: {TRACE_FORMAT}"
_INT_COLUMNS = {"t", "cap_exceeded"}


class TraceFormatError(ValueError):
    pass


def _fmt(name, x):
    if name in _INT_COLUMNS:
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def trace_csv_text(trace):
    buf = io.StringIO()
    buf.write(_MAGIC + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in trace.data:
        writer.writerow([_fmt(c, v) for c, v in zip(COLUMNS, row)])
    return buf.getvalue()


def read_trace_csv(path):
    """Parse a trace CSV into an ``(epochs, len(COLUMNS))`` float array."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != _MAGIC:
            raise TraceFormatError(f"{path}: expected '{_MAGIC}', got {first!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise TraceFormatError(f"{path}: unexpected column header {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    return np.array(rows, dtype=np.float64).reshape(-1, len(COLUMNS))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def dump_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def trace_header(trace):
    return {
        "trace_format": TRACE_FORMAT,
        "columns": list(COLUMNS),
        "problem": trace.problem,
        "scheme": trace.scheme,
        "seed": trace.seed,
        "schedule": trace.schedule,
        "epochs": len(trace),
        "f_star": trace.f_star,
        "reached_at": trace.reached_at,
        "final_objective": trace.final_objective,
        "initial_point": trace.initial_point,
        "final_point": trace.final_point,
        "full_trace": trace.iterates is not None,
        **trace.header,
    }


def write_trace(trace, stem):
    """Write ``<stem>.csv``, ``<stem>.json`` and, for full traces, ``<stem>.npz``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    csv_path.write_text(trace_csv_text(trace))
    dump_json(trace_header(trace), stem.with_suffix(".json"))
    if trace.points is not None:
        arrays = {"points": trace.points, "permutations": trace.permutations}
        if trace.iterates is not None:
            arrays["iterates"] = trace.iterates
        np.savez_compressed(stem.with_suffix(".npz"), **arrays)
    return csv_path


def read_trace(path):
    """Load a trace from its CSV path (or stem); the JSON header and npz are optional."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix == ".csv" else path
    data = read_trace_csv(stem.with_suffix(".csv"))
    head = {}
    jpath = stem.with_suffix(".json")
    if jpath.exists():
        head = json.loads(jpath.read_text())
    extra = {}
    npz = stem.with_suffix(".npz")
    if npz.exists():
        with np.load(npz) as z:
            extra = {k: z[k] for k in z.files}

    def point(key):
        v = head.get(key)
        return None if v is None else np.asarray(v, dtype=np.float64)

    known = {"problem", "scheme", "seed", "schedule", "f_star", "reached_at", "final_objective",
             "initial_point", "final_point"}
    return RunTrace(
        data=data,
        problem=head.get("problem"),
        scheme=head.get("scheme"),
        seed=head.get("seed"),
        schedule=head.get("schedule"),
        initial_point=point("initial_point"),
        final_point=point("final_point"),
        final_objective=head.get("final_objective", math.nan),
        f_star=head.get("f_star"),
        reached_at=head.get("reached_at"),
        points=extra.get("points"),
        permutations=extra.get("permutations"),
        iterates=extra.get("iterates"),
        header={k: v for k, v in head.items() if k not in known and k not in ("trace_format", "columns", "epochs", "full_trace")},
    )
