"""Deterministic seeded randomness.

Every random choice in the library draws from a numpy PCG64 generator whose
seed is derived from a root seed plus a sequence of labels via splitmix64.
The derivation scheme is an implementation constant fixed for the lifetime of
the repository: runs of the same build reproduce bit-identical streams.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (next state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *labels: int | str) -> int:
    """Derive a 64-bit sub-seed from a root seed and a label path.

    Labels may be ints or short strings; strings are absorbed in 8-byte
    little-endian chunks.
    """
    state = seed & _MASK64
    state, out = splitmix64(state)
    for label in labels:
        if isinstance(label, str):
            raw = label.encode() or b"\x00"
            chunks = [
                int.from_bytes(raw[i : i + 8], "little")
                for i in range(0, len(raw), 8)
            ]
        else:
            chunks = [int(label) & _MASK64]
        for chunk in chunks:
            state, out = splitmix64(state ^ chunk)
    state, out = splitmix64(state)
    return out


def make_rng(seed: int, *labels: int | str) -> np.random.Generator:
    """PCG64 generator on the sub-stream named by ``labels``."""
    return np.random.default_rng(derive_seed(seed, *labels))
