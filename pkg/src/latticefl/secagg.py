"""Simulated pairwise-mask secure aggregation on the fine lattice.

Each unordered client pair derives an identical uniform mask vector from
the round seed; the lower-id client adds it, the higher-id client
subtracts it, so masks cancel bit-exactly in the modular sum and the
server learns nothing but the total.  The shared discrete-Gaussian draw
is split into integer shares that sum exactly to the full draw, so the
aggregate carries one noise sample per coordinate, never a sum of
independent ones.

All values here are fine-lattice integers: ``split_denominator`` fine
units per lattice step, so a coarse point ``z`` enters as
``z * split_denominator``.  Key agreement, dropout recovery, and
malicious-party defenses are out of scope; the participant set is fixed
within a round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OverflowSuspected
from .lattice import LatticeSpec, ensure_accumulator_headroom, wrap_centered


def wire_modulus(q: int, m: int) -> int:
    """Group size (in fine units) carrying the masked payloads.

    The per-client coarse group of size ``q`` expands by the participant
    count ``m`` so the plaintext sum cannot wrap, and by ``m`` again for
    the fine-unit refinement; the result is rounded up to odd so the
    centered wrap is symmetric.
    """
    if q < 1 or q % 2 == 0:
        raise ValueError(f"q must be a positive odd integer, got {q}")
    if m < 1:
        raise ValueError(f"participant count must be >= 1, got {m}")
    wide = m * m * q
    return wide if wide % 2 else wide + 1


@dataclass(frozen=True)
class PairwiseMask:
    """Uniform mask shared by one ordered client pair.

    ``values`` is added by ``sender`` and subtracted by ``receiver``, so
    the pair contributes zero to the aggregate.
    """

    sender: int
    receiver: int
    values: np.ndarray


def mask_stream(round_seed: int, i: int, j: int) -> np.random.Generator:
    """Counter-based generator both endpoints of a pair can reproduce."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([round_seed, i, j])))


def derive_masks(
    round_seed: int, participants, d_pad: int, wire_q: int
) -> list[PairwiseMask]:
    """All pairwise masks for a round, one per unordered pair.

    Deterministic in (round_seed, i, j): both endpoints derive the same
    vector, uniform over the centered residues mod ``wire_q``.
    """
    if wire_q % 2 == 0:
        raise ValueError(f"wire modulus must be odd, got {wire_q}")
    ids = sorted(participants)
    if len(set(ids)) != len(ids):
        raise ValueError("participant ids must be distinct")
    half = (wire_q - 1) // 2
    masks = []
    for a, i in enumerate(ids):
        for j in ids[a + 1 :]:
            rng = mask_stream(round_seed, i, j)
            values = rng.integers(-half, half + 1, size=d_pad, dtype=np.int64)
            masks.append(PairwiseMask(sender=i, receiver=j, values=values))
    return masks


def split_integer(v, m: int) -> np.ndarray:
    """Split fine-unit integers into ``m`` integer shares summing exactly.

    Euclidean quotient plus one extra unit for the first ``v mod m``
    ranks (remainder taken in ``[0, m)``).  ``v`` may be a scalar or a
    vector; the result has shape ``(m,) + v.shape``.
    """
    if m < 1:
        raise ValueError(f"share count must be >= 1, got {m}")
    v = np.asarray(v, dtype=np.int64)
    base = v // m
    remainder = v - base * m
    ranks = np.arange(m, dtype=np.int64).reshape((m,) + (1,) * v.ndim)
    return base + (ranks < remainder)


def split_noise(noise_z: np.ndarray, m: int, rank: int) -> np.ndarray:
    """Rank ``rank``'s fine-unit share of a coarse noise draw.

    The draw enters the fine lattice as ``z * m``, so shares are exact
    and the ``m`` ranks reconstruct the full draw coordinatewise.
    """
    if not 0 <= rank < m:
        raise ValueError(f"rank must be in [0, {m}), got {rank}")
    fine = np.asarray(noise_z, dtype=np.int64) * m
    base = fine // m
    remainder = fine - base * m
    return base + (rank < remainder)


def mask_and_wrap(
    noised_fine: np.ndarray, masks_in, masks_out, wire_q: int
) -> np.ndarray:
    """One client's wire payload: wrap, add incoming masks, subtract
    outgoing masks, wrap again.

    The inner wrap is redundant whenever the plaintext is already in
    range but is kept so the wire value matches the protocol definition
    bit for bit.
    """
    acc = wrap_centered(np.asarray(noised_fine, dtype=np.int64), wire_q)
    for mask in masks_in:
        acc = acc + mask
    for mask in masks_out:
        acc = acc - mask
    return wrap_centered(acc, wire_q)


def server_aggregate(
    payloads,
    m: int,
    wire_q: int,
    spec: LatticeSpec,
    plaintext_bound: int | None = None,
) -> np.ndarray:
    """Recover the averaged aggregate from the masked payloads.

    Sums mod ``wire_q``, recenters, converts fine units to real values,
    and divides by ``m``.  Equals ``(sum quantized + noise) / m`` exactly
    whenever the plaintext sum stayed inside the group.  When
    ``plaintext_bound`` (fine units) is given, any recovered coordinate
    beyond it raises OverflowSuspected: a wrapped sum, i.e. a bug or an
    inconsistent configuration, never statistical noise at the validated
    settings.
    """
    payloads = [np.asarray(p, dtype=np.int64) for p in payloads]
    if len(payloads) != m:
        raise ValueError(f"expected {m} payloads, got {len(payloads)}")
    lengths = {p.size for p in payloads}
    if len(lengths) != 1:
        raise ValueError(f"payloads disagree on length: {sorted(lengths)}")
    ensure_accumulator_headroom(m + 1, wire_q)
    total = wrap_centered(np.sum(payloads, axis=0, dtype=np.int64), wire_q)
    if plaintext_bound is not None and int(np.abs(total).max(initial=0)) > plaintext_bound:
        raise OverflowSuspected(
            f"recovered coordinate magnitude {int(np.abs(total).max())} exceeds "
            f"plaintext bound {plaintext_bound}"
        )
    # m is the fine-unit refinement (spec.split_denominator in protocol use).
    fine_unit = spec.step / m
    return total * fine_unit / m
