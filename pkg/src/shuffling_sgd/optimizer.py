"""Shuffling-type gradient method.

Each epoch ``t`` starts at ``w_0 = w~_{t-1}``, visits the components in the
order ``pi^(t)`` with per-step size ``eta_t / n`` and ends at ``w~_t = w_n``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .problems import ContractViolation
from .shuffling import Permutation, ShufflingScheme, make_permutation

# per-epoch scalar columns, in CSV order
COLUMNS = (
    "t",
    "eta",
    "F",
    "gap",
    "avg_sq_grad",
    "inner_sq_grad",
    "dist_sq_to_wstar",
    "dist_sq_end",
    "dist_sum_inner",
    "dev_sum_excl",
    "dev_sum_incl",
    "telescoping_err",
    "cap_exceeded",
)


class DivergenceError(RuntimeError):
    def __init__(self, epoch, step, detail=""):
        self.epoch = epoch
        self.step = step
        msg = f"iterate diverged at epoch {epoch}, inner step {step}"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass
class EpochRecord:
    """Statistics of one epoch.

    ``dev_sum_excl`` is ``(1/n) sum_{j<n} ||w_j - w_0||^2``, ``dev_sum_incl`` also
    includes ``j = n``; ``dist_sum_inner`` is ``(1/n) sum_{j<n} ||w_j - w*||^2``
    and ``inner_sq_grad`` is ``(1/n) sum_i ||grad f(w_{i-1}; pi(i))||^2``.
    ``F`` and ``avg_sq_grad`` are evaluated at the start point.
    """

    t: int
    eta: float
    F: float
    gap: float
    avg_sq_grad: float
    inner_sq_grad: float
    dist_sq_to_wstar: float
    dist_sq_end: float
    dist_sum_inner: float
    dev_sum_excl: float
    dev_sum_incl: float
    telescoping_err: float
    cap_exceeded: int
    permutation: Optional[Permutation] = None
    start_point: Optional[np.ndarray] = None
    end_point: Optional[np.ndarray] = None
    iterates: Optional[np.ndarray] = None

    def scalars(self):
        return tuple(getattr(self, c) for c in COLUMNS)


def _generic_epoch(problem, w0, step, order, w_star, store, epoch):
    n, d = problem.n, problem.d
    w = w0.copy()
    grad_sum = np.zeros(d)
    inner_sq = dev_excl = dist_inner = 0.0
    iterates = np.empty((n + 1, d)) if store else None
    if store:
        iterates[0] = w0
    for i, k in enumerate(order):
        diff = w - w0
        dev_excl += diff @ diff
        if w_star is not None:
            ds = w - w_star
            dist_inner += ds @ ds
        g = problem.component_grad(w, k)
        inner_sq += g @ g
        grad_sum += g
        w = w - step * g
        if store:
            iterates[i + 1] = w
        wn = w @ w
        if not math.isfinite(wn) or wn > kernels.DIVERGENCE_NORM**2:
            raise DivergenceError(epoch, i + 1, f"||w||^2 = {wn:.3g}")
    diff = w - w0
    stats = np.array([inner_sq / n, dev_excl / n, (dev_excl + diff @ diff) / n, dist_inner / n])
    return w, grad_sum, stats, iterates


def run_epoch(problem, w0, eta_t, perm, epoch=1, w_star=None, f_star=None, cap=None, store=False):
    """One epoch of the shuffling method; returns ``(w_n, EpochRecord)``."""
    w0 = problem.check_weights(w0)
    if not (eta_t > 0 and math.isfinite(eta_t)):
        raise ContractViolation(f"eta_t must be positive and finite, got {eta_t}")
    if len(perm) != problem.n:
        raise ContractViolation(f"permutation has length {len(perm)}, problem has n={problem.n}")
    n = problem.n
    step = eta_t / n
    order = perm.indices
    F0, g0 = problem.point_stats(w0)
    if not (math.isfinite(F0) and math.isfinite(g0)):
        raise DivergenceError(epoch, 0, "non-finite objective at epoch start")
    fast = getattr(problem, "fast_epoch", None)
    if fast is not None:
        w, grad_sum, stats, iterates, status = fast(w0, step, order, w_star, store)
        if status != kernels.OK:
            raise DivergenceError(epoch, int(status))
        if not store:
            iterates = None
    else:
        w, grad_sum, stats, iterates = _generic_epoch(problem, w0, step, order, w_star, store, epoch)
    predicted = w0 - step * grad_sum
    scale = max(np.linalg.norm(w0), np.linalg.norm(w), step * np.linalg.norm(grad_sum), 1e-300)
    tele = float(np.linalg.norm(w - predicted) / scale)
    if w_star is not None:
        d0 = w0 - w_star
        d1 = w - w_star
        dist0, dist1, dist_inner = float(d0 @ d0), float(d1 @ d1), float(stats[3])
    else:
        dist0 = dist1 = dist_inner = math.nan
    record = EpochRecord(
        t=int(epoch),
        eta=float(eta_t),
        F=F0,
        gap=F0 - f_star if f_star is not None else math.nan,
        avg_sq_grad=g0,
        inner_sq_grad=float(stats[0]),
        dist_sq_to_wstar=dist0,
        dist_sq_end=dist1,
        dist_sum_inner=dist_inner,
        dev_sum_excl=float(stats[1]),
        dev_sum_incl=float(stats[2]),
        telescoping_err=tele,
        cap_exceeded=-1 if cap is None else int(eta_t > cap * (1.0 + 1e-12)),
        permutation=perm,
        start_point=w0,
        end_point=w,
        iterates=iterates,
    )
    return w, record


class _Columns:
    """Growable column store; keeps long runs out of per-epoch Python objects."""

    def __init__(self, capacity=1024):
        self._data = np.empty((capacity, len(COLUMNS)))
        self.size = 0

    def append(self, row):
        if self.size == self._data.shape[0]:
            grown = np.empty((2 * self.size, len(COLUMNS)))
            grown[: self.size] = self._data
            self._data = grown
        self._data[self.size] = row
        self.size += 1

    def array(self):
        return self._data[: self.size].copy()


@dataclass
class RunTrace:
    """Per-epoch scalars plus run metadata.

    ``data`` has one row per epoch and the columns listed in ``COLUMNS``.
    ``points`` (start points ``w~_0..w~_{T-1}`` followed by the final point),
    ``permutations`` and ``iterates`` are filled only when requested.
    """

    data: np.ndarray
    problem: dict
    scheme: str
    seed: int
    schedule: dict
    initial_point: np.ndarray
    final_point: np.ndarray
    final_objective: float
    f_star: Optional[float] = None
    reached_at: Optional[int] = None
    points: Optional[np.ndarray] = None
    permutations: Optional[np.ndarray] = None
    iterates: Optional[np.ndarray] = None
    header: dict = field(default_factory=dict)

    def __len__(self):
        return self.data.shape[0]

    def column(self, name):
        return self.data[:, COLUMNS.index(name)]

    def record(self, k):
        """EpochRecord for the ``k``-th epoch (0-based row)."""
        row = self.data[k]
        kw = {c: row[j] for j, c in enumerate(COLUMNS)}
        kw["t"] = int(kw["t"])
        kw["cap_exceeded"] = int(kw["cap_exceeded"])
        rec = EpochRecord(**kw)
        if self.points is not None:
            rec.start_point = self.points[k]
            rec.end_point = self.points[k + 1]
        if self.permutations is not None:
            rec.permutation = Permutation(self.permutations[k])
        if self.iterates is not None:
            rec.iterates = self.iterates[k]
        return rec

    def records(self):
        return [self.record(k) for k in range(len(self))]

    def min_gap_so_far(self):
        return np.minimum.accumulate(self.column("gap"))


def run(
    problem,
    w0,
    schedule,
    scheme,
    T,
    seed=None,
    w_star=None,
    f_star=None,
    full_trace=False,
    keep_points=False,
    stop_gap=None,
    cap=None,
):
    """Run ``T`` epochs with step sizes ``schedule.eta_at(t)``.

    ``w_star``/``f_star`` default to the problem's ground truth and ``cap``
    to the schedule's cap, else ``min(n/(2M), 1/(2L))`` when L and M are known. With
    ``stop_gap`` the run ends after the first epoch whose start point has
    ``F - F* <= stop_gap`` (its index is ``reached_at``).
    """
    if T is None or int(T) < 1:
        raise ContractViolation(f"number of epochs must be >= 1, got {T}")
    T = int(T)
    if isinstance(scheme, str):
        scheme = ShufflingScheme(scheme, 0 if seed is None else seed)
    elif seed is not None:
        scheme = ShufflingScheme(scheme.kind, seed)
    w = problem.check_weights(w0).astype(np.float64, copy=True)
    truth = problem.truth
    if w_star is None and truth.w_star is not None:
        w_star = truth.w_star
    if f_star is None:
        f_star = truth.f_star
    if cap is None:
        cap = getattr(schedule, "cap", None)
    if cap is None and truth.smoothness is not None and truth.star_smooth_M is not None:
        cap = min(problem.n / (2.0 * truth.star_smooth_M), 1.0 / (2.0 * truth.smoothness))
    if stop_gap is not None and f_star is None:
        raise ContractViolation("stop_gap needs a known optimal value F*")
    cols = _Columns(min(T, 1 << 16))
    store = bool(full_trace)
    keep = keep_points or full_trace
    points = [w.copy()] if keep else None
    perms = [] if keep else None
    iters = [] if store else None
    fixed = None if scheme.kind == "rr" else make_permutation(scheme, problem.n, 1)
    reached = None
    initial = w.copy()
    for t in range(1, T + 1):
        perm = fixed if fixed is not None else make_permutation(scheme, problem.n, t)
        w, rec = run_epoch(problem, w, schedule.eta_at(t), perm, t, w_star, f_star, cap, store)
        cols.append(rec.scalars())
        if keep:
            points.append(w.copy())
            perms.append(perm.order)
        if store:
            iters.append(rec.iterates)
        if stop_gap is not None and rec.gap <= stop_gap:
            reached = t
            break
    final_F = problem.objective(w)
    return RunTrace(
        data=cols.array(),
        problem=problem.to_dict(),
        scheme=scheme.kind,
        seed=scheme.seed,
        schedule=schedule.to_dict(),
        initial_point=initial,
        final_point=w,
        final_objective=final_F,
        f_star=f_star,
        reached_at=reached,
        points=np.array(points) if keep else None,
        permutations=np.array(perms) if keep else None,
        iterates=np.array(iters) if store else None,
    )
