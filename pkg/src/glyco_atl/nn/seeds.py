"""Deterministic, label-addressed random streams.

Every stochastic component (weight init, dropout, batch shuffling, meal
jitter, ...) pulls its own generator keyed by a root seed plus string/int
labels. Streams with different labels are statistically independent, and
adding or removing one consumer never perturbs the draws of another,
which is what makes run-level bit reproducibility possible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label) -> list[int]:
    if isinstance(label, (int, np.integer)):
        return [int(label) & 0xFFFFFFFF, (int(label) >> 32) & 0xFFFFFFFF]
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *labels) -> np.random.Generator:
    """Return a fresh PCG64 generator for (seed, labels)."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for label in labels:
        entropy.extend(_label_words(label))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
