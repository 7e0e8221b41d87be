"""Finite-sum problems ``F(w) = (1/n) sum_i f(w; i)``.

Problem objects use 0-based component indices internally
(``component_value(w, k)`` with ``0 <= k < n``). The module level helpers
:func:`eval_objective`, :func:`grad_component` and :func:`finite_diff_grad`
follow the external 1-based convention ``1 <= i <= n``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels


class ContractViolation(ValueError):
    """A documented precondition of an operation was not met."""


@dataclass(frozen=True)
class GroundTruth:
    """Analytically known facts about a problem; every field may be absent."""

    w_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    component_minima: Optional[np.ndarray] = None
    smoothness: Optional[float] = None
    sigma_star_sq: Optional[float] = None
    # average PL constant and star-smooth-convex constant, when derivable
    pl_constant: Optional[float] = None
    star_smooth_M: Optional[float] = None

    def lower_bound_gap(self):
        """``F* - mean(f_i*)``; nonnegative whenever both are present."""
        if self.f_star is None or self.component_minima is None:
            return None
        return self.f_star - float(np.mean(self.component_minima))


def _as_weights(w, d):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != d:
        raise ContractViolation(f"weight vector has shape {w.shape}, expected ({d},)")
    return w


class FiniteSumProblem:
    """Base class. Subclasses implement ``component_value``/``component_grad``.

    Instances are treated as immutable after construction.
    """

    kind = "abstract"
    smooth = True

    def __init__(self, n, d, truth=None):
        if n < 1 or d < 1:
            raise ContractViolation(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        self.n = int(n)
        self.d = int(d)
        self.truth = truth if truth is not None else GroundTruth()

    # -- per component -------------------------------------------------
    def component_value(self, w, k):
        raise NotImplementedError

    def component_grad(self, w, k):
        raise NotImplementedError

    # -- batched; subclasses override when they can do better -----------
    def values(self, w):
        return np.array([self.component_value(w, k) for k in range(self.n)])

    def grads(self, w):
        return np.stack([self.component_grad(w, k) for k in range(self.n)])

    def grad_sq_norms(self, w):
        g = self.grads(w)
        return np.einsum("ij,ij->i", g, g)

    def objective(self, w):
        return float(np.mean(self.values(w)))

    def full_grad(self, w):
        return self.grads(w).mean(axis=0)

    def point_stats(self, w):
        """``(F(w), (1/n) sum_i ||grad f(w; i)||^2)``."""
        return self.objective(w), float(np.mean(self.grad_sq_norms(w)))

    @property
    def component_lower_bounds(self):
        """Known values (or valid lower bounds) of ``f_i*``."""
        return self.truth.component_minima

    def initial_point(self):
        return np.zeros(self.d)

    def check_weights(self, w):
        return _as_weights(w, self.d)

    def check_index(self, i):
        """Validate a 1-based index and return the 0-based one."""
        if not (1 <= int(i) <= self.n) or int(i) != i:
            raise ContractViolation(f"component index {i} outside [1, {self.n}]")
        return int(i) - 1

    def to_dict(self):
        raise NotImplementedError


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------


class LeastSquaresProblem(FiniteSumProblem):
    """Components ``f(w; i) = 0.5 * (a_i . w - b_i)^2``."""

    kind = "least_squares"

    def __init__(self, rows, targets, truth=None, spec=None):
        A = np.ascontiguousarray(rows, dtype=np.float64)
        b = np.ascontiguousarray(targets, dtype=np.float64)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ContractViolation(f"rows {A.shape} and targets {b.shape} do not match")
        super().__init__(A.shape[0], A.shape[1], truth)
        self.A = A
        self.b = b
        self.row_sq = np.einsum("ij,ij->i", A, A)
        self._spec = spec
        self.A.flags.writeable = False
        self.b.flags.writeable = False

    def component_value(self, w, k):
        r = self.A[k] @ w - self.b[k]
        return 0.5 * r * r

    def component_grad(self, w, k):
        return (self.A[k] @ w - self.b[k]) * self.A[k]

    def residuals(self, w):
        return self.A @ w - self.b

    def values(self, w):
        r = self.residuals(w)
        return 0.5 * r * r

    def grads(self, w):
        return self.residuals(w)[:, None] * self.A

    def grad_sq_norms(self, w):
        r = self.residuals(w)
        return r * r * self.row_sq

    def full_grad(self, w):
        return self.A.T @ self.residuals(w) / self.n

    def point_stats(self, w):
        F, g2 = kernels.least_squares_point_stats(self.A, self.b, self.row_sq, np.asarray(w, dtype=np.float64))
        return float(F), float(g2)

    def fast_epoch(self, w0, step, order, w_star, store):
        has_star = w_star is not None
        ws = w_star if has_star else np.zeros(self.d)
        return kernels.least_squares_epoch(
            self.A, self.b, np.ascontiguousarray(w0, dtype=np.float64), float(step),
            np.ascontiguousarray(order, dtype=np.int64), ws, has_star, bool(store),
        )

    def to_dict(self):
        if self._spec is not None:
            return dict(self._spec)
        return {"kind": "least_squares", "rows": self.A.tolist(), "targets": self.b.tolist()}


def _least_squares_truth(A, b):
    row_sq = np.einsum("ij,ij->i", A, A)
    w_star, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = A @ w_star - b
    n = A.shape[0]
    return GroundTruth(
        w_star=w_star,
        f_star=float(0.5 * np.mean(r * r)),
        component_minima=np.zeros(n),
        smoothness=float(row_sq.max()),
        sigma_star_sq=float(np.mean(r * r * row_sq)),
        pl_constant=float(row_sq.min()),
        # each component is convex and L-smooth, so star-M-smooth-convex with M = L
        star_smooth_M=float(row_sq.max()),
    )


def build_least_squares(rows, targets):
    """Least squares problem with analytic metadata.

    ``L = max ||a_i||^2``, ``f_i* = 0``, average PL constant ``min ||a_i||^2``
    and ``w_star`` from ``lstsq`` (the minimum norm minimizer).
    """
    A = np.asarray(rows, dtype=np.float64)
    b = np.asarray(targets, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ContractViolation(f"rows must be a nonempty (n, d) array, got shape {A.shape}")
    if b.shape != (A.shape[0],):
        raise ContractViolation(f"targets shape {b.shape} does not match {A.shape[0]} rows")
    zero = np.flatnonzero(~np.any(A != 0.0, axis=1))
    if zero.size:
        raise ContractViolation(f"rows {(zero + 1).tolist()} are all zero (constant components)")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ContractViolation("rows and targets must be finite")
    return LeastSquaresProblem(A, b, _least_squares_truth(A, b))


def build_interpolating_generator(n, d, seed, radius=1.0):
    """Over-parameterized least squares with an exact common minimizer.

    Rows are i.i.d. Gaussian directions normalized to unit length (so
    ``L = mu = 1``). The hidden solution lies in the row space and has norm
    ``radius``; it is therefore the minimizer closest to the origin.
    """
    n, d = int(n), int(d)
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    if d < n:
        raise ContractViolation(
            f"d={d} < n={n}: interpolation needs d >= n so that a generic system is consistent"
        )
    if not radius > 0:
        raise ContractViolation("radius must be positive")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    w_hidden = A.T @ rng.standard_normal(n)
    w_hidden *= radius / np.linalg.norm(w_hidden)
    b = A @ w_hidden
    row_sq = np.einsum("ij,ij->i", A, A)
    truth = GroundTruth(
        w_star=w_hidden,
        f_star=0.0,
        component_minima=np.zeros(n),
        smoothness=float(row_sq.max()),
        sigma_star_sq=0.0,
        pl_constant=float(row_sq.min()),
        star_smooth_M=float(row_sq.max()),
    )
    spec = {"kind": "interpolating", "n": n, "d": d, "seed": seed, "radius": float(radius)}
    return LeastSquaresProblem(A, b, truth, spec=spec)


# ---------------------------------------------------------------------------
# squared-loss network with a final bias layer
# ---------------------------------------------------------------------------

ACTIVATIONS = ("tanh", "sigmoid", "relu")


def _activate(name, a):
    if name == "tanh":
        z = np.tanh(a)
        return z, 1.0 - z * z
    if name == "sigmoid":
        z = 0.5 * (1.0 + np.tanh(0.5 * a))
        return z, z * (1.0 - z)
    z = np.maximum(a, 0.0)
    return z, (a > 0.0).astype(np.float64)


@dataclass(frozen=True)
class BiasMlpArchitecture:
    input_dim: int
    hidden: tuple = ()
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ContractViolation(f"all layer widths must be >= 1: {self}")
        if self.activation not in ACTIVATIONS:
            raise ContractViolation(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_shapes(self):
        dims = (self.input_dim,) + self.hidden + (self.output_dim,)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_params(self):
        return sum(i * o + o for i, o in self.layer_shapes)

    def init_weights(self, seed):
        """Uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
        rng = np.random.default_rng(seed)
        parts = []
        for fan_in, fan_out in self.layer_shapes:
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            parts.append(rng.uniform(-bound, bound, size=fan_out))
        return np.concatenate(parts)

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }


class BiasMlpProblem(FiniteSumProblem):
    """``f(w; i) = 0.5 * ||h(w; x_i) - y_i||^2`` for a fully connected network.

    The flat weight vector is laid out layer by layer as ``[W_1, b_1, ...,
    W_out, b_out]`` (row-major ``W`` of shape ``(fan_in, fan_out)``), so its last
    ``output_dim`` entries are the final bias.
    """

    kind = "bias_mlp"

    def __init__(self, arch, inputs, labels, seed=0, truth=None, spec=None):
        X = np.ascontiguousarray(inputs, dtype=np.float64)
        Y = np.ascontiguousarray(labels, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or X.shape[1] != arch.input_dim:
            raise ContractViolation(f"inputs shape {X.shape} incompatible with input_dim={arch.input_dim}")
        if Y.shape != (X.shape[0], arch.output_dim):
            raise ContractViolation(f"labels shape {Y.shape} incompatible with {X.shape[0]} x {arch.output_dim}")
        if truth is None:
            truth = GroundTruth(component_minima=np.zeros(X.shape[0]))
        super().__init__(X.shape[0], arch.n_params, truth)
        self.arch = arch
        self.X = X
        self.Y = Y
        self.seed = seed
        self.smooth = arch.activation != "relu"
        self._spec = spec
        self._slices = []
        pos = 0
        for fan_in, fan_out in arch.layer_shapes:
            self._slices.append((pos, pos + fan_in * fan_out, pos + fan_in * fan_out + fan_out, fan_in, fan_out))
            pos += fan_in * fan_out + fan_out

    def initial_point(self):
        return self.arch.init_weights(self.seed)

    def unpack(self, w):
        return [
            (w[s:m].reshape(fi, fo), w[m:e]) for s, m, e, fi, fo in self._slices
        ]

    def _forward(self, w, X):
        layers = self.unpack(w)
        zs = [X]
        derivs = []
        z = X
        for W, bias in layers[:-1]:
            z, dz = _activate(self.arch.activation, z @ W + bias)
            zs.append(z)
            derivs.append(dz)
        W, bias = layers[-1]
        return z @ W + bias, zs, derivs, layers

    def predict(self, w, X=None):
        return self._forward(self.check_weights(w), self.X if X is None else X)[0]

    def values(self, w):
        out = self._forward(w, self.X)[0]
        diff = out - self.Y
        return 0.5 * np.einsum("ij,ij->i", diff, diff)

    def component_value(self, w, k):
        out = self._forward(w, self.X[k : k + 1])[0]
        diff = out[0] - self.Y[k]
        return 0.5 * float(diff @ diff)

    def _backward(self, w, X, Y):
        """Per-sample layer gradients; entry ``l`` is ``(z_{l-1}, delta_l)``."""
        out, zs, derivs, layers = self._forward(w, X)
        delta = out - Y
        pieces = [None] * len(layers)
        for l in range(len(layers) - 1, -1, -1):
            pieces[l] = (zs[l], delta)
            if l > 0:
                delta = (delta @ layers[l][0].T) * derivs[l - 1]
        return pieces

    def component_grad(self, w, k):
        pieces = self._backward(w, self.X[k : k + 1], self.Y[k : k + 1])
        g = np.empty(self.d)
        for (s, m, e, fi, fo), (z, delta) in zip(self._slices, pieces):
            g[s:m] = np.outer(z[0], delta[0]).ravel()
            g[m:e] = delta[0]
        return g

    def grads(self, w):
        pieces = self._backward(w, self.X, self.Y)
        G = np.empty((self.n, self.d))
        for (s, m, e, fi, fo), (z, delta) in zip(self._slices, pieces):
            G[:, s:m] = np.einsum("ni,no->nio", z, delta).reshape(self.n, -1)
            G[:, m:e] = delta
        return G

    def grad_sq_norms(self, w):
        # ||z delta^T||_F^2 = ||z||^2 ||delta||^2, so per-sample outer products are never formed
        pieces = self._backward(w, self.X, self.Y)
        total = np.zeros(self.n)
        for z, delta in pieces:
            dd = np.einsum("ij,ij->i", delta, delta)
            total += dd * (np.einsum("ij,ij->i", z, z) + 1.0)
        return total

    def full_grad(self, w):
        pieces = self._backward(w, self.X, self.Y)
        g = np.empty(self.d)
        for (s, m, e, fi, fo), (z, delta) in zip(self._slices, pieces):
            g[s:m] = (z.T @ delta).ravel() / self.n
            g[m:e] = delta.mean(axis=0)
        return g

    def to_dict(self):
        if self._spec is not None:
            return dict(self._spec)
        return {
            "kind": "bias_mlp",
            "architecture": self.arch.to_dict(),
            "inputs": self.X.tolist(),
            "labels": self.Y.tolist(),
            "seed": self.seed,
        }


def build_bias_mlp(arch, inputs, labels, seed=0):
    """Squared-loss network problem; ``f_i*`` is reported as the lower bound 0."""
    if not isinstance(arch, BiasMlpArchitecture):
        arch = BiasMlpArchitecture(**arch)
    return BiasMlpProblem(arch, inputs, labels, seed=seed)


def build_teacher_mlp(arch, n, seed, data_seed=None):
    """Labels produced by a hidden teacher of the same architecture.

    The teacher weights are a zero-loss solution, recorded as ``w_star``.
    """
    if not isinstance(arch, BiasMlpArchitecture):
        arch = BiasMlpArchitecture(**arch)
    data_seed = seed if data_seed is None else data_seed
    rng = np.random.default_rng([data_seed, 1])
    X = rng.standard_normal((int(n), arch.input_dim))
    teacher = arch.init_weights([data_seed, 2])
    scratch = BiasMlpProblem(arch, X, np.zeros((int(n), arch.output_dim)))
    Y = scratch.predict(teacher)
    truth = GroundTruth(
        w_star=teacher, f_star=0.0, component_minima=np.zeros(int(n)), sigma_star_sq=0.0
    )
    spec = {
        "kind": "bias_mlp",
        "architecture": arch.to_dict(),
        "n": int(n),
        "seed": seed,
        "data_seed": data_seed,
    }
    return BiasMlpProblem(arch, X, Y, seed=seed, truth=truth, spec=spec)


# ---------------------------------------------------------------------------
# contract-level helpers (1-based component indices)
# ---------------------------------------------------------------------------


def eval_objective(problem, w):
    """``F(w) = (1/n) sum_i f(w; i)``."""
    return problem.objective(problem.check_weights(w))


def grad_component(problem, w, i):
    """Exact gradient of component ``i`` (1-based)."""
    k = problem.check_index(i)
    return problem.component_grad(problem.check_weights(w), k)


def finite_diff_grad(problem, w, i, h=1e-5):
    """Central-difference gradient of component ``i`` (1-based), coordinate by coordinate."""
    if not h > 0:
        raise ContractViolation(f"finite-difference step must be positive, got {h}")
    k = problem.check_index(i)
    w = problem.check_weights(w).copy()
    g = np.empty(problem.d)
    for j in range(problem.d):
        orig = w[j]
        w[j] = orig + h
        fp = problem.component_value(w, k)
        w[j] = orig - h
        fm = problem.component_value(w, k)
        w[j] = orig
        g[j] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# ---------------------------------------------------------------------------
# JSON problem documents
# ---------------------------------------------------------------------------


def problem_from_dict(doc):
    """Build a problem from ``{"kind": ..., parameters...}``; see README for the schema."""
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ContractViolation("problem document must be an object with a 'kind' field")
    kind = doc["kind"]
    if kind == "least_squares":
        return build_least_squares(doc["rows"], doc["targets"])
    if kind == "interpolating":
        return build_interpolating_generator(doc["n"], doc["d"], doc.get("seed", 0), doc.get("radius", 1.0))
    if kind == "bias_mlp":
        arch = BiasMlpArchitecture(**doc["architecture"])
        if "inputs" in doc:
            return build_bias_mlp(arch, doc["inputs"], doc["labels"], seed=doc.get("seed", 0))
        return build_teacher_mlp(arch, doc["n"], doc.get("seed", 0), doc.get("data_seed"))
    raise ContractViolation(f"unknown problem kind {kind!r}")
