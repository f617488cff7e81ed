"""Deterministic seed derivation for sub-streams (trials, channel, decoder)."""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(state: int) -> int:
    z = (state + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64

def derive_seed(master: int, *indices: int) -> int:
    """Derive a child seed from ``master`` and a tuple of stream indices.

    The rule is a SplitMix64 chain: starting from the master seed, each index
    is folded in with ``state = splitmix64(state ^ splitmix64(index))``.  The
    same (master, indices) always yields the same child, and distinct index
    tuples yield (practically) independent streams, so parallel trials can be
    seeded without any shared RNG state.
    """
    state = master & _MASK64
    for idx in indices:
        state = _splitmix64(state ^ _splitmix64(idx & _MASK64))
    return state
