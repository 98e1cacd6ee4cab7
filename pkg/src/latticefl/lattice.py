"""Quantization lattice, centered modular wrap, and integer codec.

Every protocol value lives on the lattice ``step * Z`` with
``step = 2 * g_max / (k - 1)``.  Scalars are plain Python ints counting
lattice steps; vectors are int64 numpy arrays.  Real numbers appear only
at the encode/decode boundary, so all modular arithmetic downstream is
exact.

Wire values use the "fine" lattice refined by ``split_denominator`` so
that one shared noise draw can be split into exactly-summing integer
shares (see :mod:`latticefl.secagg`).  A coarse point ``z`` embeds into
the fine lattice as ``z * split_denominator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, OffLattice

# Relative tolerance for identifying a real number with a lattice point.
# Quantization always produces exact multiples; this only absorbs decimal
# round-off in hand-written configs.
ENCODE_RTOL = 1e-9

# int64 accumulators: sums must stay strictly below 2**63.
_ACCUMULATOR_LIMIT = 1 << 62


@dataclass(frozen=True)
class LatticeSpec:
    """The discrete support of quantized updates and noise.

    g_max:
        Symmetric coordinate bound; the quantizer grid spans
        ``[-g_max, g_max]``.
    k:
        Number of quantization levels.  Must be odd so that the level
        grid ``-g_max + r * step`` consists of integer lattice steps;
        for even ``k`` the levels would sit half a step off the lattice
        and could not be carried as integers.
    q:
        Odd modulus of the coarse cyclic group (the wrap
        :func:`phi_q` maps onto ``{z : |z| <= (q - 1) / 2}``).
    split_denominator:
        Number of exactly-summing shares one noise draw is split into
        (the per-round participant count in protocol use).
    """

    g_max: float
    k: int
    q: int
    split_denominator: int = 1

    def __post_init__(self):
        if self.g_max <= 0:
            raise ValueError(f"g_max must be positive, got {self.g_max}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.k % 2 == 0:
            raise ValueError(
                f"k must be odd so quantizer levels are lattice points, got {self.k}"
            )
        if self.q < 1 or self.q % 2 == 0:
            raise ValueError(f"q must be a positive odd integer, got {self.q}")
        if self.split_denominator < 1:
            raise ValueError(
                f"split_denominator must be >= 1, got {self.split_denominator}"
            )
        ensure_accumulator_headroom(self.split_denominator**2, self.q)

    @property
    def step(self) -> float:
        """Lattice spacing ``2 * g_max / (k - 1)``."""
        return 2.0 * self.g_max / (self.k - 1)

    @property
    def half_levels(self) -> int:
        """Largest quantizer level magnitude in lattice steps, ``(k-1)/2``."""
        return (self.k - 1) // 2

    def sigma_units(self, sigma: float) -> float:
        """Convert a real-valued noise scale to lattice-step units."""
        return sigma / self.step


def ensure_accumulator_headroom(count: int, modulus: int) -> None:
    """Reject configurations whose integer sums could overflow int64.

    ``count`` values wrapped to magnitude ``< modulus`` are summed before
    re-wrapping; their total must stay below the int64 accumulator limit
    (with a factor-two margin for intermediates).
    """
    if count * modulus >= _ACCUMULATOR_LIMIT:
        raise ConfigError(
            f"accumulating {count} values mod {modulus} could overflow int64; "
            "reduce q, the participant count, or the quantization level"
        )


def wrap_centered(z, modulus: int):
    """Map integers onto the centered residues ``[-(m-1)/2, (m-1)/2]``.

    Uses the non-negative remainder, so the result is total and
    sign-stable for negative inputs.  ``modulus`` must be odd.  Accepts a
    Python int or an integer ndarray and returns the same kind.
    """
    half = (modulus - 1) // 2
    if isinstance(z, np.ndarray):
        return (z + half) % modulus - half
    return (int(z) + half) % modulus - half


def phi_q(z: int, spec: LatticeSpec) -> int:
    """Wrap one lattice point into the coarse group of size ``spec.q``."""
    return wrap_centered(z, spec.q)


def phi_q_vec(z: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Coordinatewise :func:`phi_q`; preserves length."""
    return wrap_centered(np.asarray(z, dtype=np.int64), spec.q)


def encode(x: float, spec: LatticeSpec) -> int:
    """Identify a real value with its lattice point.

    Raises OffLattice when ``x`` is not a lattice multiple within the
    relative tolerance ``ENCODE_RTOL``.
    """
    ratio = x / spec.step
    z = round(ratio)
    if abs(ratio - z) > ENCODE_RTOL * max(1.0, abs(ratio)):
        raise OffLattice(f"{x!r} is not a multiple of step={spec.step!r}")
    return int(z)


def decode(z: int, spec: LatticeSpec) -> float:
    """Real value of a lattice point."""
    return z * spec.step


def encode_vec(x: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Vectorized :func:`encode`."""
    ratio = np.asarray(x, dtype=float) / spec.step
    z = np.rint(ratio)
    bad = np.abs(ratio - z) > ENCODE_RTOL * np.maximum(1.0, np.abs(ratio))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise OffLattice(
            f"coordinate {i} ({x[i]!r}) is not a multiple of step={spec.step!r}"
        )
    return z.astype(np.int64)


def decode_vec(z: np.ndarray, spec: LatticeSpec) -> np.ndarray:
    """Vectorized :func:`decode`."""
    return np.asarray(z, dtype=np.int64) * spec.step
