"""Discrete Gaussian on the lattice: exact sampling and mass utilities.

The distribution puts mass proportional to ``exp(-x^2 / (2 sigma^2))`` on
each lattice point ``x``.  Internally everything is computed on the
integer lattice with the per-step scale ``sigma_units = sigma / step``;
the public class converts at the boundary.

The sampler is exact: rejection from a two-sided discrete-Laplace
proposal, never a rounded continuous Gaussian (rounding would change the
distribution and void the Renyi-divergence bound the accountant relies
on).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .errors import SamplerStall
from .lattice import LatticeSpec

# Terms of every truncated series stop once they drop below this fraction
# of the running sum; the minimum summation radius is 20 sigma.
SERIES_RTOL = 1e-20

# Candidate draws per requested sample before the sampler is declared
# stalled.  The accept rate is bounded away from zero for all sigma, so
# the cap only ever trips on an arithmetic bug.
MAX_REJECTIONS_PER_SAMPLE = 10**6

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _std_normal_sf(x: float) -> float:
    """P[N(0,1) >= x] via the complementary error function."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def sample_integer_gaussian(
    sigma_units: float, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Draw ``size`` exact samples of the integer-lattice Gaussian.

    Rejection sampling with a discrete-Laplace proposal of integer scale
    ``t = floor(sigma) + 1``; a proposal ``y`` is accepted with
    probability ``exp(-(|y| - sigma^2/t)^2 / (2 sigma^2))``, which makes
    the output law exactly proportional to ``exp(-y^2 / (2 sigma^2))``.
    """
    if sigma_units <= 0:
        raise ValueError(f"sigma must be positive, got {sigma_units}")
    size = int(size)
    if size == 0:
        return np.empty(0, dtype=np.int64)

    t = math.floor(sigma_units) + 1
    log_p = -1.0 / t  # geometric parameter of the Laplace magnitude
    var = sigma_units * sigma_units
    shift = var / t

    out = np.empty(size, dtype=np.int64)
    filled = 0
    drawn = 0
    while filled < size:
        batch = max(64, 2 * (size - filled))
        # Difference of two iid geometrics is a two-sided discrete Laplace.
        g1 = np.floor(np.log(1.0 - rng.random(batch)) / log_p).astype(np.int64)
        g2 = np.floor(np.log(1.0 - rng.random(batch)) / log_p).astype(np.int64)
        y = g1 - g2
        dev = np.abs(y).astype(float) - shift
        accepted = y[rng.random(batch) < np.exp(-(dev * dev) / (2.0 * var))]
        take = min(accepted.size, size - filled)
        out[filled : filled + take] = accepted[:take]
        filled += take
        drawn += batch
        if drawn > MAX_REJECTIONS_PER_SAMPLE * size:
            raise SamplerStall(
                f"accept rate collapsed at sigma={sigma_units} "
                f"({filled}/{size} after {drawn} draws)"
            )
    return out


@lru_cache(maxsize=256)
def _log_normalizer(sigma_units: float) -> float:
    """log of ``sum_z exp(-z^2 / (2 sigma^2))`` over integers ``z``."""
    var = sigma_units * sigma_units
    radius = max(1, math.ceil(20.0 * sigma_units))
    z = np.arange(-radius, radius + 1, dtype=float)
    total = float(np.exp(-(z * z) / (2.0 * var)).sum())
    while True:
        radius += 1
        term = 2.0 * math.exp(-(radius * radius) / (2.0 * var))
        if term < SERIES_RTOL * total:
            return math.log(total)
        total += term


@dataclass(frozen=True)
class DiscreteGaussian:
    """Symmetric discrete Gaussian ``N_L(sigma)`` on a lattice.

    ``sigma`` is in real units of the coordinate values; the support is
    ``spec.step * Z``.
    """

    sigma: float
    spec: LatticeSpec

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @property
    def sigma_units(self) -> float:
        return self.spec.sigma_units(self.sigma)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Exact sample(s) in lattice steps; scalar when ``size`` is None."""
        if size is None:
            return int(sample_integer_gaussian(self.sigma_units, rng, 1)[0])
        return sample_integer_gaussian(self.sigma_units, rng, size)

    def log_pmf(self, z) -> float | np.ndarray:
        zz = np.asarray(z, dtype=float)
        su = self.sigma_units
        out = -(zz * zz) / (2.0 * su * su) - _log_normalizer(su)
        return float(out) if np.isscalar(z) else out

    def pmf(self, z) -> float | np.ndarray:
        return np.exp(self.log_pmf(z))

    def variance_upper_bound(self) -> float:
        """Closed-form upper bound on the variance, in real units.

        Always strictly below ``sigma^2``; for ``sigma_units^2 <= 1/3``
        the sharper exponential bound is taken as well.
        """
        su2 = self.sigma_units**2
        x = 4.0 * math.pi**2 * su2
        # x / (e^x - 1) -> 0 for large x; guard the overflow of expm1.
        correction = x / math.expm1(x) if x < 700.0 else 0.0
        bound = su2 * (1.0 - correction)
        if su2 <= 1.0 / 3.0:
            bound = min(bound, 3.0 * math.exp(-1.0 / (2.0 * su2)))
        return bound * self.spec.step**2

    def tail_bound(self, m: int) -> tuple[float, float]:
        """Bracket ``P[X >= m]`` (``m`` in lattice steps) between
        continuous-Gaussian tails.

        Returns ``(upper, lower)``.  The lower bound requires
        ``sigma_units >= 1/sqrt(2 pi)`` and is 0 otherwise.
        """
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        su = self.sigma_units
        upper = _std_normal_sf((m - 1) / su)
        if su >= _INV_SQRT_2PI:
            lower = _std_normal_sf(m / su) / (1.0 + 3.0 * math.exp(-2.0 * math.pi**2 * su * su))
        else:
            lower = 0.0
        return upper, lower

    def renyi_divergence(self, mu: int, alpha: float) -> float:
        """Order-``alpha`` Renyi divergence between the distribution and
        its shift by ``mu`` lattice steps, by truncated summation.

        This is the numeric ground truth the accountant's closed form
        ``alpha * mu^2 / (2 sigma_units^2)`` must dominate.
        """
        if alpha <= 1.0:
            raise ValueError(f"alpha must be > 1, got {alpha}")
        mu = int(mu)
        if mu == 0:
            return 0.0
        su = self.sigma_units
        var = su * su
        # Summand exp(-(alpha x^2 + (1-alpha)(x-mu)^2) / (2 var)) peaks at
        # x = (1 - alpha) mu with unit curvature, hence width ~ sigma.
        center = (1.0 - alpha) * mu
        radius = max(1, math.ceil(20.0 * su)) + 5
        while True:
            x = np.arange(math.floor(center) - radius, math.floor(center) + radius + 1, dtype=float)
            log_terms = -(alpha * x * x + (1.0 - alpha) * (x - mu) ** 2) / (2.0 * var)
            log_num = float(logsumexp(log_terms))
            edge = max(log_terms[0], log_terms[-1])
            if edge < log_num + math.log(SERIES_RTOL):
                break
            radius *= 2
        return (log_num - _log_normalizer(su)) / (alpha - 1.0)
