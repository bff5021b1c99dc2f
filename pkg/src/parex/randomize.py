"""Deterministic per-(user, campaign) treatment assignment.

Assignment is a pure function of (user_id, campaign_index, seed): a user is
assigned to the test group of campaign j iff

    unit(user_id, j, seed) < share_j

where ``unit`` maps the inputs to a uniform double in [0, 1) through a 64-bit
mixing function. Because no per-auction quantity enters the hash, a user's arm
is persistent across every auction of an experiment.

Mixer definition (all arithmetic mod 2^64)::

    h = splitmix64_finalize(seed XOR rotl(user_id * C1, 31) XOR (campaign_index * C2))
    C1 = 0x9E3779B97F4A7C15    C2 = 0xC2B2AE3D27D4EB4F

    splitmix64_finalize(x):
        x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9
        x ^= x >> 27;  x *= 0x94D049BB133111EB
        x ^= x >> 31

The unit float is built from the top 53 bits of ``h`` so the comparison
against a share is exact in double precision. Reference test vectors live in
``tests/fixtures/hash_split_vectors.csv``.

The same counter-based construction powers every other random quantity in the
simulator (arrivals, outcome noise, queue jitter, covariates) through
purpose-specific derived seeds, which makes all downstream draws independent
of execution order and thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1
_C1 = 0x9E3779B97F4A7C15
_C2 = 0xC2B2AE3D27D4EB4F
_ROT = 31
_FIN1 = 0xBF58476D1CE4E5B9
_FIN2 = 0x94D049BB133111EB

# FNV-1a, used only to fold substream labels into derived seeds.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


@dataclass(frozen=True)
class SplitSeed:
    """Experiment-wide randomization seed, fixed for the experiment's lifetime."""

    seed: int

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def mix64(user_id: int, campaign_index: int, seed: int) -> int:
    """Mix (user_id, campaign_index, seed) into a 64-bit hash."""
    x = (user_id & _MASK) * _C1 & _MASK
    x = ((x << _ROT) | (x >> (64 - _ROT))) & _MASK
    x ^= (seed & _MASK) ^ ((campaign_index & _MASK) * _C2 & _MASK)
    x ^= x >> 30
    x = x * _FIN1 & _MASK
    x ^= x >> 27
    x = x * _FIN2 & _MASK
    x ^= x >> 31
    return x


def unit_float(user_id: int, campaign_index: int, seed: int) -> float:
    """Uniform double in [0, 1) from the top 53 bits of the mix."""
    return (mix64(user_id, campaign_index, seed) >> 11) * 2.0**-53


def assign(user_id: int, campaign_index: int, seed: SplitSeed | int, share: float) -> bool:
    """Return True for test, False for control. Strict comparison: test iff u < share."""
    if not 0.0 <= share <= 1.0:
        raise ValueError(f"share must lie in [0, 1], got {share}")
    s = seed.seed if isinstance(seed, SplitSeed) else seed
    return unit_float(user_id, campaign_index, s) < share


def mix64_bulk(user_ids: np.ndarray, campaign_index: int | np.ndarray, seed: int) -> np.ndarray:
    """Vectorized mix64 over uint64 arrays."""
    with np.errstate(over="ignore"):
        x = user_ids.astype(np.uint64, copy=True)
        x *= np.uint64(_C1)
        x = (x << np.uint64(_ROT)) | (x >> np.uint64(64 - _ROT))
        c = np.uint64(campaign_index) if np.isscalar(campaign_index) else np.asarray(campaign_index, dtype=np.uint64)
        x ^= np.uint64(seed & _MASK) ^ (c * np.uint64(_C2))
        x ^= x >> np.uint64(30)
        x *= np.uint64(_FIN1)
        x ^= x >> np.uint64(27)
        x *= np.uint64(_FIN2)
        x ^= x >> np.uint64(31)
    return x


def unit_floats(user_ids: np.ndarray, campaign_index: int | np.ndarray, seed: int) -> np.ndarray:
    """Vectorized uniform doubles in [0, 1)."""
    return (mix64_bulk(user_ids, campaign_index, seed) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def assign_bulk(user_ids: np.ndarray, campaign_index: int, seed: int, share: float) -> np.ndarray:
    """Vectorized assignment; returns a boolean array (True = test)."""
    if not 0.0 <= share <= 1.0:
        raise ValueError(f"share must lie in [0, 1], got {share}")
    return unit_floats(user_ids, campaign_index, seed) < share


def derive_seed(seed: int, label: str) -> int:
    """Derive an independent substream seed from the experiment seed and a label.

    Substreams keep e.g. arrival draws uncorrelated with assignment draws even
    though both are keyed by user id.
    """
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return mix64(h, 0, seed)


def empirical_share(assignments) -> float:
    """Fraction of assignments in the test arm.

    Accepts any boolean/0-1 sequence or array; raises on empty input.
    """
    arr = np.asarray(assignments)
    if arr.size == 0:
        raise ValueError("empirical_share of an empty assignment set")
    return float(np.count_nonzero(arr)) / arr.size
