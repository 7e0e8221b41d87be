"""Hot inner loops.

Each kernel is written once in the numpy subset numba understands and is
compiled with ``numba.njit`` unless ``SHUFFLING_SGD_DISABLE_NUMBA`` is set,
in which case the identical body runs as ordinary numpy code.
"""

import numpy as np

from ._accel import jit

# status codes returned by the epoch kernels
OK = -1

DIVERGENCE_NORM = 1e12


@jit
def least_squares_epoch(A, b, w0, step, order, w_star, has_star, store):
    """One shuffled pass of ``w <- w - step * a_k (a_k.w - b_k)``.

    ``order`` holds 0-based component indices. Returns
    ``(w_n, grad_sum, stats, iterates, status)`` where ``stats`` is
    ``[inner_sq_grad, dev_excl, dev_incl, dist_inner]`` (all averaged over n)
    and ``status`` is ``OK`` or the 1-based inner step that went non-finite.
    """
    n, d = A.shape
    w = w0.copy()
    grad_sum = np.zeros(d)
    inner_sq = 0.0
    dev_excl = 0.0
    dist_inner = 0.0
    if store:
        iterates = np.empty((n + 1, d))
        iterates[0] = w0
    else:
        iterates = np.empty((0, d))
    status = OK
    for i in range(n):
        k = order[i]
        diff = w - w0
        dev_excl += np.dot(diff, diff)
        if has_star:
            ds = w - w_star
            dist_inner += np.dot(ds, ds)
        row = A[k]
        r = np.dot(row, w) - b[k]
        g = r * row
        inner_sq += np.dot(g, g)
        grad_sum += g
        w = w - step * g
        if store:
            iterates[i + 1] = w
        wn = np.dot(w, w)
        if not np.isfinite(wn) or wn > DIVERGENCE_NORM * DIVERGENCE_NORM:
            status = i + 1
            break
    diff = w - w0
    dev_incl = dev_excl + np.dot(diff, diff)
    stats = np.empty(4)
    stats[0] = inner_sq / n
    stats[1] = dev_excl / n
    stats[2] = dev_incl / n
    stats[3] = dist_inner / n
    return w, grad_sum, stats, iterates, status


@jit
def least_squares_point_stats(A, b, row_sq, w):
    """``(F(w), mean_i ||grad f(w; i)||^2)`` for least squares components."""
    r = A @ w - b
    r2 = r * r
    return 0.5 * np.mean(r2), np.mean(r2 * row_sq)



@jit
def fisher_yates(draws):
    """Permutation of ``0..n-1`` from ``draws[k]`` uniform on ``[0, n-1-k]``.

    Step ``k`` swaps position ``n-1-k`` with position ``draws[k]``.
    """
    n = draws.shape[0] + 1
    perm = np.arange(n)
    for k in range(n - 1):
        i = n - 1 - k
        j = draws[k]
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    return perm
