"""Paired significance statistics for comparing two evaluation runs."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np

Z_95 = 1.959964


def mcnemar_mid_p(b: int, c: int) -> float:
    """Two-sided mid-p McNemar test on discordant counts ``b`` and ``c``.

    Exact binomial summation in rationals: ``min(1, 2 P(X<k) + P(X=k))`` with
    ``X ~ Bin(b+c, 1/2)`` and ``k = min(b, c)``.
    """
    if b < 0 or c < 0:
        raise ValueError("discordant counts must be nonnegative")
    n = b + c
    if n == 0:
        return 1.0
    k = min(b, c)
    below = sum(math.comb(n, i) for i in range(k))
    p = Fraction(2 * below + math.comb(n, k), 2**n)
    return float(min(Fraction(1), p))


def paired_bootstrap_ci(
    labels_a: Sequence[int],
    labels_b: Sequence[int],
    resamples: int = 2000,
    seed: int = 42,
    level: float = 0.95,
) -> tuple[float, float, float]:
    """Percentile CI for ``mean(b) - mean(a)`` in percentage points."""
    a = np.asarray(labels_a, dtype=np.float64)
    b = np.asarray(labels_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-D and equal length")
    if a.size == 0:
        raise ValueError("label vectors are empty")
    diff = b - a
    delta = 100.0 * diff.mean()
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, diff.size, size=(resamples, diff.size))
    boot = 100.0 * diff[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(boot, [tail, 100.0 - tail])
    return float(delta), float(lo), float(hi)


def wilson_ci(successes: int, n: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return lo, hi


def discordant(labels_a: Sequence[int], labels_b: Sequence[int]) -> tuple[int, int]:
    """``(b, c)``: a-correct/b-wrong and a-wrong/b-correct counts."""
    pairs = list(zip(labels_a, labels_b))
    return (
        sum(1 for x, y in pairs if x and not y),
        sum(1 for x, y in pairs if y and not x),
    )
