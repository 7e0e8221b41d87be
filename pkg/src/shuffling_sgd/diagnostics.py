"""Numerical checks of the smoothness, PL and star-smooth-convex assumptions and
of the per-epoch bounds that the convergence analysis relies on.

Every inequality ``lhs <= rhs`` is tested with slack ``rtol * (1 + |rhs|)``;
reported margins are ``(rhs - lhs) / (1 + |rhs|)`` so that a check passes
exactly when its margin is ``>= -rtol``.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .problems import relative_error, finite_diff_grad
from .schedule import compute_constants, step_cap

DEFAULT_RTOL = 1e-9
PL_SKIP_BELOW = 1e-14


def _margin(lhs, rhs):
    return (rhs - lhs) / (1.0 + np.abs(rhs))


@dataclass
class CheckSummary:
    name: str
    checked: int = 0
    passed: int = 0
    out_of_regime: int = 0
    status: str = "unavailable"
    worst_margin: float = math.inf
    first_failure: Optional[int] = None
    detail: str = ""

    @property
    def failed(self):
        return self.checked - self.passed

    def to_dict(self):
        d = asdict(self)
        d["failed"] = self.failed
        if not math.isfinite(d["worst_margin"]):
            d["worst_margin"] = None
        return d


def _summarize(name, margins, in_regime, rtol, epochs=None):
    margins = np.asarray(margins, dtype=np.float64)
    in_regime = np.asarray(in_regime, dtype=bool)
    s = CheckSummary(name)
    s.out_of_regime = int((~in_regime).sum())
    m = margins[in_regime]
    s.checked = int(m.size)
    ok = m >= -rtol
    s.passed = int(ok.sum())
    if m.size:
        s.worst_margin = float(m.min())
        s.status = "pass" if ok.all() else "fail"
        if not ok.all():
            k = np.flatnonzero(in_regime)[np.flatnonzero(~ok)[0]]
            s.first_failure = int(epochs[k]) if epochs is not None else int(k)
    else:
        s.status = "out_of_regime" if s.out_of_regime else "unavailable"
    return s


# ---------------------------------------------------------------------------
# constants from the problem
# ---------------------------------------------------------------------------


def _ball_point(rng, center, radius):
    v = rng.standard_normal(center.shape[0])
    v *= radius * rng.random() ** (1.0 / center.shape[0]) / np.linalg.norm(v)
    return center + v


def estimate_smoothness(problem, sample_count=1000, radius=1.0, seed=0, center=None, refine=3):
    """Largest observed ``||grad f(w;i) - grad f(w';i)|| / ||w - w'||``.

    Samples come in groups: one random pair in a ball around ``center``
    followed by ``refine`` pairs whose direction is the previous gradient
    difference (a power-iteration step on the local curvature). Every ratio is
    realized by an actual pair, so the result never exceeds the true L.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    rng = np.random.default_rng(seed)
    center = problem.initial_point() if center is None else np.asarray(center, dtype=np.float64)
    best = 0.0
    k = 0
    w = direction = None
    for s in range(sample_count):
        if s % (refine + 1) == 0:
            k = int(rng.integers(problem.n))
            w = _ball_point(rng, center, radius)
            w2 = _ball_point(rng, center, radius)
        else:
            w2 = w + 1e-2 * radius * direction
        step = w2 - w
        dist = np.linalg.norm(step)
        if dist == 0.0:
            continue
        diff = problem.component_grad(w2, k) - problem.component_grad(w, k)
        ratio = np.linalg.norm(diff) / dist
        best = max(best, ratio)
        dn = np.linalg.norm(diff)
        direction = diff / dn if dn > 0 else step / dist
    return float(best)


@dataclass
class PLResult:
    mu_hat: Optional[float]
    worst_point: Optional[int]
    checked: int
    skipped: int
    status: str


def check_average_pl(problem, points, lower_bounds=None):
    """Smallest ratio ``mean ||grad f_i||^2 / (2 mean (f_i - f_i*))`` over ``points``.

    Points whose denominator is below 1e-14 are skipped (the inequality is
    vacuous there). ``lower_bounds`` defaults to the problem's ``f_i*`` data.
    """
    lb = problem.component_lower_bounds if lower_bounds is None else np.asarray(lower_bounds)
    if lb is None:
        return PLResult(None, None, 0, 0, "unavailable")
    best, where, checked, skipped = math.inf, None, 0, 0
    for j, w in enumerate(points):
        w = np.asarray(w, dtype=np.float64)
        denom = 2.0 * float(np.mean(problem.values(w) - lb))
        if denom < PL_SKIP_BELOW:
            skipped += 1
            continue
        checked += 1
        ratio = float(np.mean(problem.grad_sq_norms(w))) / denom
        if ratio < best:
            best, where = ratio, j
    if checked == 0:
        return PLResult(None, None, 0, skipped, "inconclusive")
    return PLResult(best, where, checked, skipped, "ok")


def sigma_star_sq(problem, w_star):
    """``(1/n) sum_i ||grad f(w*; i)||^2`` at the supplied minimizer."""
    return float(np.mean(problem.grad_sq_norms(np.asarray(w_star, dtype=np.float64))))


@dataclass
class BiasPLResult:
    checked: int
    violations: int
    worst_margin: float


def check_bias_pl(problem, points, rtol=DEFAULT_RTOL):
    """``||grad f(w;i)||^2 >= 2 f(w;i) - rtol (1 + ||grad f||^2)`` for every point and component."""
    checked = violations = 0
    worst = math.inf
    for w in points:
        g2 = problem.grad_sq_norms(w)
        f = problem.values(w)
        margin = (g2 - 2.0 * f) / (1.0 + g2)
        checked += g2.size
        violations += int((margin < -rtol).sum())
        worst = min(worst, float(margin.min()))
    return BiasPLResult(checked, violations, worst)


def gradient_check(problem, trials=50, h=1e-5, seed=0, scale=0.5, points=None):
    """Max relative error between analytic and central-difference component gradients."""
    if not h > 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    base = problem.initial_point()
    worst = 0.0
    for trial in range(trials):
        w = base + scale * rng.standard_normal(problem.d) if points is None else points[trial % len(points)]
        i = int(rng.integers(problem.n)) + 1
        g = problem.component_grad(w, i - 1)
        worst = max(worst, relative_error(g, finite_diff_grad(problem, w, i, h)))
    return worst


# ---------------------------------------------------------------------------
# per-epoch bounds
# ---------------------------------------------------------------------------


@dataclass
class WeightBoundResult:
    status: str
    ok: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)


WEIGHT_CHECKS = ("eq_thm_weight_01", "eq_thm_weight_02", "eq_thm_weight_04")


def weight_bound_margins(eta, dist0, dist_inner, dev_excl, dev_incl, n, L, sigma_sq):
    """Margins of the three inner-iterate bounds (vectorized over epochs)."""
    eta2 = eta * eta
    L2 = L * L
    rhs01 = eta2 * (8.0 * L2 / 3.0) * dist0 + (16.0 * L2 * sigma_sq / 3.0) * eta2 * eta2 + 2.0 * sigma_sq * eta2
    rhs02 = 4.0 * dist0 + 8.0 * sigma_sq * eta2
    rhs04 = rhs01 + 4.0 * L2 * eta2 / n * dist0 + 8.0 * L2 * eta2 * eta2 / n * sigma_sq
    return {
        "eq_thm_weight_01": _margin(dev_excl, rhs01),
        "eq_thm_weight_02": _margin(dist_inner, rhs02),
        "eq_thm_weight_04": _margin(dev_incl, rhs04),
    }


def _record_distances(record, w_star):
    if w_star is not None and record.iterates is not None:
        W = record.iterates
        d = W - w_star
        sq = np.einsum("ij,ij->i", d, d)
        n = W.shape[0] - 1
        return float(sq[0]), float(sq[:n].mean())
    return record.dist_sq_to_wstar, record.dist_sum_inner


def check_weight_bounds(record, n, L, sigma_star_sq, w_star=None, rtol=DEFAULT_RTOL):
    """Bounds on ``(1/n) sum ||w_j - w*||^2`` and the deviation sums for one epoch.

    Requires ``eta_t <= 1/(2L)``; otherwise the result is ``out_of_regime``.
    """
    dist0, dist_inner = _record_distances(record, w_star)
    if not (math.isfinite(dist0) and math.isfinite(dist_inner)):
        return WeightBoundResult("unavailable")
    if record.eta > 1.0 / (2.0 * L):
        return WeightBoundResult("out_of_regime")
    margins = weight_bound_margins(
        record.eta, dist0, dist_inner, record.dev_sum_excl, record.dev_sum_incl, n, L, sigma_star_sq
    )
    margins = {k: float(v) for k, v in margins.items()}
    ok = {k: v >= -rtol for k, v in margins.items()}
    return WeightBoundResult("pass" if all(ok.values()) else "fail", ok, margins)


def weight_bound_summaries(trace, n, L, sigma_sq, rtol=DEFAULT_RTOL):
    dist0 = trace.column("dist_sq_to_wstar")
    inner = trace.column("dist_sum_inner")
    if not np.all(np.isfinite(dist0)):
        return {name: CheckSummary(name, detail="w* unknown") for name in WEIGHT_CHECKS}
    eta = trace.column("eta")
    regime = eta <= 1.0 / (2.0 * L)
    margins = weight_bound_margins(
        eta, dist0, inner, trace.column("dev_sum_excl"), trace.column("dev_sum_incl"), n, L, sigma_sq
    )
    epochs = trace.column("t").astype(int)
    return {name: _summarize(name, margins[name], regime, rtol, epochs) for name in WEIGHT_CHECKS}


def check_descent_recursion(trace, ledger, n, sigma_star_sq=0.0, F_star=None, rtol=DEFAULT_RTOL):
    """Per-epoch distance recursions with constants (B1, B2) and (C1, C2, C3).

    Returns ``{"eq_lem_convex_01": CheckSummary, "eq_lem_convex_02": CheckSummary}``
    plus the raw margin arrays under ``"margins"``. Epochs with
    ``eta_t > min(n/(2M), 1/(2L))`` are out of regime.
    """
    names = ("eq_lem_convex_01", "eq_lem_convex_02")
    d0 = trace.column("dist_sq_to_wstar")
    d1 = trace.column("dist_sq_end")
    if ledger is None or not np.all(np.isfinite(d0)):
        detail = "constants missing" if ledger is None else "w* unknown"
        return {name: CheckSummary(name, detail=detail) for name in names}
    if F_star is None:
        gap = trace.column("gap")
    else:
        gap = trace.column("F") - F_star
    eta = trace.column("eta")
    regime = eta <= step_cap(n, ledger.L, ledger.M) * (1.0 + 1e-12)
    eta3 = eta**3
    rhs1 = (1.0 + ledger.B1 * eta3) * d0 - eta / (2.0 * ledger.M) * trace.column("inner_sq_grad") + ledger.B2 * eta * sigma_star_sq
    out = {"margins": {}}
    epochs = trace.column("t").astype(int)
    m1 = _margin(d1, rhs1)
    out["eq_lem_convex_01"] = _summarize(names[0], m1, regime, rtol, epochs)
    out["margins"][names[0]] = m1
    if np.all(np.isfinite(gap)):
        rhs2 = (1.0 + ledger.C1 * eta3) * d0 + ledger.C2 * eta * sigma_star_sq - ledger.C3 * eta * gap
        m2 = _margin(d1, rhs2)
        out["eq_lem_convex_02"] = _summarize(names[1], m2, regime, rtol, epochs)
        out["margins"][names[1]] = m2
    else:
        out["eq_lem_convex_02"] = CheckSummary(names[1], detail="F* unknown")
    return out


@dataclass
class StarSmoothResult:
    status: str
    checked: int = 0
    satisfied: int = 0
    fraction: float = math.nan
    worst_margin: float = math.nan
    min_M_given_N: float = math.nan
    min_M_with_N0: float = math.nan
    min_N_at_M: Optional[float] = None
    M_for_N_fit: Optional[float] = None


def _min_M(ip, excess):
    """Smallest M >= 0 with ``M * ip >= excess`` everywhere (inf if impossible)."""
    need = excess > 0
    if np.any(need & (ip <= 0)):
        return math.inf
    pos = need & (ip > 0)
    return float((excess[pos] / ip[pos]).max()) if pos.any() else 0.0


def check_star_smooth_convex(problem, trace, M, N=0.0, w_star=None, M_for_N_fit=None, rtol=DEFAULT_RTOL):
    """Residuals of the trajectory-level star-smooth-convex condition.

    For every epoch and inner step ``i`` with ``g = grad f(w_{i-1}; pi(i)) -
    grad f(w*; pi(i))``, ``R = M <g, w_{i-1} - w*> + N dev - ||g||^2`` where
    ``dev = (1/n) sum_{i=1..n} ||w_i - w_0||^2``. Needs a full trace.
    """
    if trace.iterates is None or trace.permutations is None:
        return StarSmoothResult("unavailable")
    w_star = problem.truth.w_star if w_star is None else np.asarray(w_star)
    if w_star is None:
        return StarSmoothResult("unavailable")
    n = problem.n
    ips, gsq, devs = [], [], []
    star_grads = problem.grads(w_star)
    for W, order in zip(trace.iterates, trace.permutations):
        dev_from_start = W[1:] - W[0]
        dev = float(np.einsum("ij,ij->", dev_from_start, dev_from_start)) / n
        for i in range(1, n + 1):
            k = int(order[i - 1]) - 1
            g = problem.component_grad(W[i - 1], k) - star_grads[k]
            ips.append(g @ (W[i - 1] - w_star))
            gsq.append(g @ g)
            devs.append(dev)
    ip, g2, dv = np.array(ips), np.array(gsq), np.array(devs)
    R = M * ip + N * dv - g2
    scale = 1.0 + np.abs(M * ip + N * dv)
    margin = R / scale
    ok = margin >= -rtol
    res = StarSmoothResult(
        "pass" if ok.all() else "fail",
        checked=int(ok.size),
        satisfied=int(ok.sum()),
        fraction=float(ok.mean()),
        worst_margin=float(margin.min()),
        min_M_given_N=_min_M(ip, g2 - N * dv),
        min_M_with_N0=_min_M(ip, g2),
    )
    if M_for_N_fit is not None:
        excess = g2 - M_for_N_fit * ip
        need = excess > 0
        if np.any(need & (dv <= 0)):
            res.min_N_at_M = math.inf
        else:
            pos = need & (dv > 0)
            res.min_N_at_M = float((excess[pos] / dv[pos]).max()) if pos.any() else 0.0
        res.M_for_N_fit = float(M_for_N_fit)
    return res


# ---------------------------------------------------------------------------
# full report
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsReport:
    L_hat: float
    L_analytic: Optional[float]
    mu_hat: Optional[float]
    M_hat: Optional[float]
    N_hat: Optional[float]
    sigma_star_sq_hat: Optional[float]
    F_star: Optional[float]
    F_star_source: str
    constants: Optional[dict]
    checks: dict
    warnings: list

    def failures(self):
        return [name for name, c in self.checks.items() if c.get("status") == "fail"]

    def to_dict(self):
        d = asdict(self)
        return d


def diagnose(problem, trace, L=None, mu=None, M=None, N=None, rtol=DEFAULT_RTOL, samples=1000, seed=0):
    """Estimate constants and run every available check on a trace."""
    truth = problem.truth
    warnings = []
    if not problem.smooth:
        warnings.append("activation is not smooth (relu): the L-smoothness assumption does not hold")
    center = truth.w_star if truth.w_star is not None else trace.initial_point
    radius = max(1.0, float(np.linalg.norm(trace.initial_point - center)))
    L_hat = estimate_smoothness(problem, samples, radius=radius, seed=seed, center=center)
    L_use = L if L is not None else (truth.smoothness if truth.smoothness is not None else L_hat)

    points = [trace.initial_point, trace.final_point]
    if trace.points is not None:
        points = list(trace.points)
    pl = check_average_pl(problem, points)
    mu_use = mu if mu is not None else (truth.pl_constant if truth.pl_constant is not None else pl.mu_hat)

    if truth.f_star is not None:
        F_star, source = truth.f_star, "analytic"
    else:
        F_star = float(min(np.min(trace.column("F")), trace.final_objective))
        source = "best observed (upper bound)"
        warnings.append("F* is the best objective value observed, an upper bound on the true minimum")

    w_star = truth.w_star
    sig = sigma_star_sq(problem, w_star) if w_star is not None else None

    checks = {}
    M_hat = N_hat = None
    star = check_star_smooth_convex(problem, trace, M if M is not None else 2.0 * L_hat, N or 0.0,
                                    M_for_N_fit=2.0 * L_hat)
    if star.status != "unavailable":
        M_hat, N_hat = star.min_M_with_N0, star.min_N_at_M
        checks["star_smooth_residuals"] = {
            "status": star.status, "checked": star.checked, "passed": star.satisfied,
            "fraction": star.fraction, "worst_margin": star.worst_margin,
        }
    else:
        checks["star_smooth_residuals"] = {"status": "unavailable", "detail": "needs --full-trace and w*"}

    M_use = M if M is not None else (truth.star_smooth_M if truth.star_smooth_M is not None else M_hat)
    N_use = N if N is not None else 0.0

    if w_star is not None:
        for name, s in weight_bound_summaries(trace, problem.n, L_use, sig, rtol).items():
            checks[name] = s.to_dict()
    else:
        for name in WEIGHT_CHECKS:
            checks[name] = CheckSummary(name, detail="w* unknown").to_dict()

    ledger = None
    if w_star is not None and mu_use is not None and M_use is not None and math.isfinite(M_use) and M_use > 0:
        ledger = compute_constants(L_use, mu_use, M_use, N_use)
        rec = check_descent_recursion(trace, ledger, problem.n, sig, F_star, rtol)
        for name in ("eq_lem_convex_01", "eq_lem_convex_02"):
            checks[name] = rec[name].to_dict()
    else:
        for name in ("eq_lem_convex_01", "eq_lem_convex_02"):
            checks[name] = CheckSummary(name, detail="w* or constants unknown").to_dict()

    if problem.kind == "bias_mlp":
        bp = check_bias_pl(problem, points, rtol)
        checks["bias_pl"] = {
            "status": "pass" if bp.violations == 0 else "fail",
            "checked": bp.checked, "passed": bp.checked - bp.violations, "worst_margin": bp.worst_margin,
        }
    return DiagnosticsReport(
        L_hat=L_hat,
        L_analytic=truth.smoothness,
        mu_hat=pl.mu_hat,
        M_hat=M_hat,
        N_hat=N_hat,
        sigma_star_sq_hat=sig,
        F_star=F_star,
        F_star_source=source,
        constants=None if ledger is None else ledger.to_dict(),
        checks=checks,
        warnings=warnings,
    )
