"""Learning-rate schedules and the closed-form constants behind them.

The exponential schedule is ``eta_t = K^t * eta_0`` with

    K     = 1 + C1 * D^3 * eps^(3/2)
    eta_0 = D * sqrt(eps) / (K * exp(lam * C1 * D^3))
    T     = ceil(lam / eps^(3/2))

and is admissible when ``D * sqrt(eps) / K <= min(n / (2M), 1 / (2L))``.
"""

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .problems import ContractViolation

C1_VARIANTS = ("proof", "stated")


class ScheduleRejected(ContractViolation):
    """Schedule parameters violate the step-size cap or the target precondition."""


@dataclass(frozen=True)
class ConstantsLedger:
    L: float
    mu: float
    M: float
    N: float
    gamma: float
    B1: float
    B2: float
    C1: float
    C2: float
    C3: float
    c1_variant: str = "proof"

    @property
    def corollary(self):
        """The same ledger with ``gamma = 1 / L^2``."""
        return compute_constants(self.L, self.mu, self.M, self.N, 1.0 / self.L**2, self.c1_variant)

    def G(self, D, dist0_sq, P=0.0):
        return 2.0 * self.C1 * D**2 * math.e * dist0_sq / self.C3 + self.C2 * P / self.C3

    def to_dict(self):
        return asdict(self)


def compute_constants(L, mu, M, N=0.0, gamma=None, c1_variant="proof"):
    """B1, B2, C1, C2, C3 for the given assumption constants.

    ``gamma`` defaults to ``1 / L^2``. ``c1_variant="stated"`` switches the
    gamma term of C1 from ``4 gamma L^4 / (3M)`` to ``4 gamma L^4 / (6M)``.
    """
    for name, value in (("L", L), ("mu", mu), ("M", M), ("gamma", 1.0 if gamma is None else gamma)):
        if not (value > 0 and math.isfinite(value)):
            raise ContractViolation(f"{name} must be positive and finite, got {value}")
    if gamma is None:
        gamma = 1.0 / L**2
    if not (N >= 0 and math.isfinite(N)):
        raise ContractViolation(f"N must be nonnegative and finite, got {N}")
    if c1_variant not in C1_VARIANTS:
        raise ContractViolation(f"c1_variant must be one of {C1_VARIANTS}")
    L2 = L * L
    B1 = 8.0 * L2 / 3.0 + 14.0 * N * L2 / M
    B2 = 2.0 / M + 1.0 + 5.0 / (6.0 * L2) + 8.0 * N / (3.0 * M * L2)
    denom = 3.0 if c1_variant == "proof" else 6.0
    C1 = B1 + 4.0 * gamma * L2 * L2 / (denom * M)
    C2 = B2 + 5.0 * gamma / (12.0 * M)
    C3 = gamma / (gamma + 1.0) * mu / M
    return ConstantsLedger(
        L=float(L), mu=float(mu), M=float(M), N=float(N), gamma=float(gamma),
        B1=B1, B2=B2, C1=C1, C2=C2, C3=C3, c1_variant=c1_variant,
    )


def step_cap(n, L, M):
    """``min(n / (2M), 1 / (2L))``."""
    return min(n / (2.0 * M), 1.0 / (2.0 * L))


def epochs_for(epsilon, lam):
    """``ceil(lam / eps^(3/2))``, snapping values within 1e-9 of an integer."""
    tau = lam / epsilon**1.5
    r = round(tau)
    if r >= 1 and abs(tau - r) <= 1e-9 * max(1.0, tau):
        return int(r)
    return max(1, math.ceil(tau))


@dataclass(frozen=True)
class ConstantSchedule:
    eta: float
    cap: Optional[float] = None
    kind: str = "constant"

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ContractViolation(f"constant step must be positive and finite, got {self.eta}")

    T = None

    def eta_at(self, t):
        return self.eta

    def to_dict(self):
        return {"kind": self.kind, "eta": self.eta, "cap": self.cap}


@dataclass(frozen=True)
class SchedulePlan:
    """Exponentially increasing schedule; all fields are derived by :func:`plan_schedule`."""

    epsilon: float
    D: float
    lam: float
    C1: float
    K: float
    eta0: float
    T: int
    cap: Optional[float] = None
    kind: str = "theorem"

    @property
    def bound(self):
        """``D sqrt(eps) / K``, the largest step the plan is allowed to take."""
        return self.D * math.sqrt(self.epsilon) / self.K

    @property
    def log_K(self):
        return math.log(self.K)

    def eta_at(self, t):
        if not (0 <= t <= self.T):
            raise ContractViolation(f"epoch {t} outside [0, {self.T}]")
        return self.eta0 * math.exp(t * self.log_K)

    def etas(self, start=0, stop=None):
        """Vector of ``eta_t`` for ``start <= t < stop`` (default: through ``T``)."""
        stop = self.T + 1 if stop is None else stop
        t = np.arange(start, stop, dtype=np.float64)
        return self.eta0 * np.exp(t * self.log_K)

    @property
    def final_within_bound(self):
        """Whether ``eta_T <= D sqrt(eps) / K``; can fail only when T was rounded up."""
        return self.eta_at(self.T) <= self.bound

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def max_admissible_D(epsilon, C1, cap):
    """Largest D such that every D' in (0, D] satisfies ``D' sqrt(eps) / K(D') <= cap``.

    Returns ``inf`` when the peak of ``D sqrt(eps) / K(D)`` is already below ``cap``.
    """
    s = math.sqrt(epsilon)
    x = epsilon**1.5

    def excess(D):
        return D * s / (1.0 + C1 * D**3 * x) - cap

    # D sqrt(eps)/K(D) is unimodal with its peak where 2 C1 D^3 eps^1.5 = 1
    peak = (1.0 / (2.0 * C1 * x)) ** (1.0 / 3.0)
    if excess(peak) <= 0:
        return math.inf
    return brentq(excess, 0.0, peak, xtol=1e-15, rtol=1e-14)


def plan_schedule(epsilon, D, lam, C1, cap=None):
    """Exponential schedule for the given parameters; rejects plans above ``cap``."""
    for name, value in (("epsilon", epsilon), ("D", D), ("lambda", lam), ("C1", C1)):
        if not (value > 0 and math.isfinite(value)):
            raise ContractViolation(f"{name} must be positive and finite, got {value}")
    K = 1.0 + C1 * D**3 * epsilon**1.5
    # log form: exp(lam C1 D^3) alone can overflow
    eta0 = math.exp(math.log(D * math.sqrt(epsilon) / K) - lam * C1 * D**3)
    if not eta0 >= np.finfo(np.float64).tiny:
        raise ScheduleRejected(f"lam*C1*D^3 = {lam * C1 * D**3:.6g} makes eta0 underflow")
    T = epochs_for(epsilon, lam)
    plan = SchedulePlan(
        epsilon=float(epsilon), D=float(D), lam=float(lam), C1=float(C1),
        K=K, eta0=eta0, T=T, cap=None if cap is None else float(cap),
    )
    if cap is not None and plan.bound > cap:
        raise ScheduleRejected(
            f"D*sqrt(eps)/K = {plan.bound:.6g} exceeds the step cap {cap:.6g}; "
            f"largest admissible D is {max_admissible_D(epsilon, C1, cap):.6g}"
        )
    return plan


@dataclass(frozen=True)
class RecursionReport:
    all_pass: bool
    checked: int
    worst_margin: float
    first_failure: Optional[int]


def verify_eta_recursion(plan, rtol=1e-12, chunk=1_000_000):
    """Check ``1/eta_t + C1 eta_t^2 <= 1/eta_{t-1}`` for ``t = 1..T``.

    Margins are relative to ``1/eta_{t-1}``; a step passes when its margin is
    at least ``-rtol``.
    """
    worst = math.inf
    first = None
    for start in range(1, plan.T + 1, chunk):
        stop = min(plan.T + 1, start + chunk)
        eta = plan.etas(start - 1, stop)
        prev, cur = eta[:-1], eta[1:]
        lhs = 1.0 / cur + plan.C1 * cur * cur
        rhs = 1.0 / prev
        margin = (rhs - lhs) / rhs
        worst = min(worst, float(margin.min()))
        bad = np.flatnonzero(margin < -rtol)
        if first is None and bad.size:
            first = int(start + bad[0])
    return RecursionReport(all_pass=first is None, checked=plan.T, worst_margin=worst, first_failure=first)


@dataclass(frozen=True)
class CorollaryResult:
    G: float
    T: int
    epsilon: float
    lam: float
    ledger: ConstantsLedger


def corollary_epochs(L, mu, M, N, P, D, dist0_sq, eps_hat, c1_variant="proof"):
    """Constant ``G`` and epoch count for an ``eps_hat``-accurate solution.

    Uses ``gamma = 1/L^2``, ``lam = 1/(C1 D^3)`` and ``eps = eps_hat / G``.
    """
    ledger = compute_constants(L, mu, M, N, 1.0 / L**2, c1_variant)
    if not (eps_hat > 0):
        raise ContractViolation(f"target accuracy must be positive, got {eps_hat}")
    G = ledger.G(D, dist0_sq, P)
    if eps_hat > G:
        raise ScheduleRejected(f"target {eps_hat:g} exceeds G = {G:.6g}")
    epsilon = eps_hat / G
    lam = 1.0 / (ledger.C1 * D**3)
    return CorollaryResult(G=G, T=epochs_for(epsilon, lam), epsilon=epsilon, lam=lam, ledger=ledger)


def plan_for_target(ledger, n, D, dist0_sq, eps_hat, P=0.0):
    """Theorem schedule for target accuracy ``eps_hat`` with the corollary normalization."""
    cor = corollary_epochs(ledger.L, ledger.mu, ledger.M, ledger.N, P, D, dist0_sq, eps_hat, ledger.c1_variant)
    cap = step_cap(n, ledger.L, ledger.M)
    plan = plan_schedule(cor.epsilon, D, cor.lam, cor.ledger.C1, cap)
    return plan, cor


def schedule_from_dict(doc):
    kind = doc.get("kind")
    if kind == "constant":
        return ConstantSchedule(eta=float(doc["eta"]), cap=doc.get("cap"))
    if kind == "theorem":
        return SchedulePlan.from_dict({k: doc[k] for k in SchedulePlan.__dataclass_fields__ if k in doc})
    raise ContractViolation(f"unknown schedule kind {kind!r}")


def with_cap(schedule, cap):
    return replace(schedule, cap=cap)
