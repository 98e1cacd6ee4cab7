"""Shared statistical oracles for the test suite.

These stay independent of the code paths they check: the wrap oracle is
a brute-force search, the distribution oracles are truncated sums over
the pmf, and goodness-of-fit runs through scipy's chi-square.
"""

from __future__ import annotations

import numpy as np
from scipy import stats


def brute_force_wrap(z: int, modulus: int) -> int:
    """The unique centered residue congruent to z, found by search."""
    half = (modulus - 1) // 2
    for y in range(-half, half + 1):
        if (y - z) % modulus == 0:
            return y
    raise AssertionError("no residue found; modulus not odd?")


def pmf_oracle(dist, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Support [-radius, radius] and pmf values on it."""
    support = np.arange(-radius, radius + 1)
    return support, np.asarray(dist.pmf(support))


def variance_oracle(dist, radius: int | None = None) -> float:
    """Sum z^2 pmf(z) over a generous truncation, in lattice units."""
    if radius is None:
        radius = max(5, int(np.ceil(25 * dist.sigma_units)))
    support, pm = pmf_oracle(dist, radius)
    return float(np.sum(support.astype(float) ** 2 * pm))


def tail_oracle(dist, m: int, radius: int | None = None) -> float:
    """P[X >= m] by truncated summation of the pmf."""
    if radius is None:
        radius = max(m + 5, int(np.ceil(25 * dist.sigma_units)))
    support = np.arange(m, radius + 1)
    return float(np.sum(dist.pmf(support)))


def gof_pvalue_discrete(samples: np.ndarray, dist, min_pmf: float = 1e-6) -> float:
    """Chi-square p-value of samples against the pmf.

    Buckets are the support points with pmf above ``min_pmf``; the test
    conditions on landing inside them (the complement holds ~1e-7 mass
    per million draws).
    """
    radius = max(2, int(np.ceil(20 * dist.sigma_units)))
    support, pm = pmf_oracle(dist, radius)
    keep = pm > min_pmf
    buckets, p = support[keep], pm[keep]
    counts = np.array([(samples == b).sum() for b in buckets])
    inside = counts.sum()
    assert inside >= 0.999 * samples.size, "unexpected mass outside the buckets"
    _, pvalue = stats.chisquare(counts, p / p.sum() * inside)
    return float(pvalue)


def gof_pvalue_uniform(residues: np.ndarray, modulus: int, n_buckets: int = 32) -> float:
    """Chi-square p-value of centered residues against the uniform law.

    Residues are grouped into contiguous ranges (expected counts derived
    from the exact number of residues per range, so uneven splits do not
    bias the statistic).
    """
    half = (modulus - 1) // 2
    shifted = np.asarray(residues, dtype=np.int64).ravel() + half
    assert shifted.min() >= 0 and shifted.max() < modulus
    n_buckets = min(n_buckets, modulus)
    observed = np.bincount(shifted * n_buckets // modulus, minlength=n_buckets)
    per_bucket = np.bincount(np.arange(modulus) * n_buckets // modulus, minlength=n_buckets)
    expected = per_bucket / modulus * shifted.size
    _, pvalue = stats.chisquare(observed, expected)
    return float(pvalue)
