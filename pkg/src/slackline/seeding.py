"""Deterministic seed derivation.

Every stochastic component derives its generator from a tuple of integers and
short labels, so seeds never depend on call order and parallel workers
reproduce the sequential results exactly.
"""

from __future__ import annotations

import numpy as np

_LABEL_SPACE = 2**31


def _encode(part: int | str) -> int:
    if isinstance(part, str):
        h = 0
        for ch in part:
            h = (h * 131 + ord(ch)) % _LABEL_SPACE
        return h
    return int(part) % (2**63)


def derive_seed(*parts: int | str) -> int:
    """Stable 63-bit integer seed from a mixed tuple of ints and labels."""
    seq = np.random.SeedSequence([_encode(p) for p in parts])
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def make_rng(*parts: int | str) -> np.random.Generator:
    seq = np.random.SeedSequence([_encode(p) for p in parts])
    return np.random.default_rng(seq)
