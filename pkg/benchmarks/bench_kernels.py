"""Compare the numba kernels with the pure-numpy fallback.

The backend is chosen at import time from SHUFFLING_SGD_DISABLE_NUMBA, so
each backend is timed in its own interpreter.

    python benchmarks/bench_kernels.py [--n 200] [--d 500] [--epochs 200]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from shuffling_sgd import backend_name, build_interpolating_generator, make_permutation, random_reshuffle
from shuffling_sgd.kernels import fisher_yates
n, d, epochs = map(int, sys.argv[1:4])
p = build_interpolating_generator(n, d, 0)
w0 = p.initial_point()
orders = [make_permutation(random_reshuffle(1), n, t).indices for t in range(1, epochs + 1)]
draws = np.random.default_rng(0).integers(0, np.arange(n, 1, -1))

def timeit(fn, reps):
    fn()  # warm-up (includes JIT compilation)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps

def epochs_loop():
    w = w0
    for o in orders:
        w = p.fast_epoch(w, 0.5 / n, o, p.truth.w_star, False)[0]
    return w

res = {
    "backend": backend_name(),
    "epoch_us": 1e6 * timeit(epochs_loop, 3) / epochs,
    "fisher_yates_us": 1e6 * timeit(lambda: fisher_yates(draws), 200),
    "point_stats_us": 1e6 * timeit(lambda: p.point_stats(w0 + 0.1), 200),
    "final": epochs_loop().tolist(),
}
print(json.dumps(res))
"""


def measure(flag, n, d, epochs):
    env = dict(os.environ, SHUFFLING_SGD_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", WORKER, str(n), str(d), str(epochs)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--d", type=int, default=500)
    parser.add_argument("--epochs", type=int, default=200)
    args = parser.parse_args()

    fast = measure("0", args.n, args.d, args.epochs)
    slow = measure("1", args.n, args.d, args.epochs)
    diff = max(abs(a - b) for a, b in zip(fast["final"], slow["final"]))
    print(f"n={args.n} d={args.d} epochs={args.epochs}")
    print(f"{'kernel':<16}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>10}")
    for key, label in (("epoch_us", "epoch"), ("fisher_yates_us", "fisher_yates"), ("point_stats_us", "point_stats")):
        print(f"{label:<16}{fast[key]:>12.1f}{slow[key]:>12.1f}{slow[key] / fast[key]:>10.1f}")
    print(f"max |w_numba - w_numpy| after {args.epochs} epochs: {diff:.2e}")


if __name__ == "__main__":
    main()
