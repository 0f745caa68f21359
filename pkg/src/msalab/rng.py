"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, *labels)`` through
:class:`numpy.random.SeedSequence`, so a trial can be replayed from its seed
alone and parallel trials never share state.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, *labels: int) -> np.random.Generator:
    """Return an independent Philox generator for ``seed`` and integer labels."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(v) for v in labels))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministically derive a 64-bit child seed from a parent seed and labels."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=tuple(int(v) for v in labels))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def trial_seeds(master: int, n: int, *labels: int) -> list[int]:
    return [derive_seed(master, *labels, i) for i in range(n)]
