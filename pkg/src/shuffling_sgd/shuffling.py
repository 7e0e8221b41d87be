"""Epoch permutations for incremental gradient, single shuffling and random reshuffling.

Random orders come from numpy's PCG64 generator. The substream for epoch
``t`` is seeded with ``SeedSequence([seed, t])`` (``SeedSequence`` hashes the
entropy words), and single shuffling always uses the ``t = 0`` substream.
A Fisher-Yates pass consumes ``n - 1`` unbiased bounded integers from that
substream, so a permutation is a pure function of ``(scheme, seed, n, t)``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .problems import ContractViolation

SCHEMES = {
    "ig": "incremental_gradient",
    "ss": "single_shuffle",
    "rr": "random_reshuffle",
}


@dataclass(frozen=True)
class ShufflingScheme:
    kind: str
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower()
        for short, long in SCHEMES.items():
            if kind in (short, long):
                object.__setattr__(self, "kind", short)
                break
        else:
            raise ContractViolation(f"unknown shuffling scheme {self.kind!r}; use one of {sorted(SCHEMES)}")

    @property
    def name(self):
        return SCHEMES[self.kind]


def incremental_gradient():
    return ShufflingScheme("ig")


def single_shuffle(seed):
    return ShufflingScheme("ss", seed)


def random_reshuffle(seed):
    return ShufflingScheme("rr", seed)


@dataclass(frozen=True)
class Permutation:
    """A bijection of ``{1, ..., n}``; ``order[i-1]`` is the component used at inner step ``i``."""

    order: np.ndarray

    @property
    def indices(self):
        """0-based component indices, for array lookups."""
        return self.order - 1

    def __len__(self):
        return self.order.shape[0]


def _substream(seed, epoch):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch)])))


def seeded_permutation(seed, stream, n):
    """0-based Fisher-Yates permutation drawn from substream ``(seed, stream)``."""
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    rng = _substream(seed, stream)
    # draw k is uniform on [0, n-1-k]
    draws = rng.integers(0, np.arange(n, 1, -1), dtype=np.int64)
    return kernels.fisher_yates(draws)


def make_permutation(scheme, n, epoch):
    """Permutation ``pi^(t)`` used in epoch ``t >= 1``."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    if epoch < 0:
        raise ContractViolation(f"epoch must be >= 0, got {epoch}")
    if scheme.kind == "ig":
        idx = np.arange(n, dtype=np.int64)
    elif scheme.kind == "ss":
        idx = seeded_permutation(scheme.seed, 0, n)
    else:
        idx = seeded_permutation(scheme.seed, epoch, n)
    return Permutation(idx + 1)


def permutation_stream(scheme, n, epochs):
    """Yield the permutations for epochs ``1..epochs``."""
    fixed = None
    for t in range(1, epochs + 1):
        if scheme.kind != "rr":
            if fixed is None:
                fixed = make_permutation(scheme, n, t)
            yield fixed
        else:
            yield make_permutation(scheme, n, t)
