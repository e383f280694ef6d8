"""Deterministic random source used by every stochastic component.

All randomness in the package flows through :class:`SeededRng`, a thin wrapper
around numpy's documented PCG64 bit generator. The state is derived purely
from an integer seed plus an optional tuple of derivation keys, so the same
seed produces the same draw sequence on every run and platform. Substreams
are split off with :meth:`SeededRng.derive`, which hashes string labels and
integers into the seed material; this is how e.g. "dropout for epoch 3" and
"shuffle for epoch 3" stay independent but reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["SeededRng"]


def _key_to_int(part: object) -> int:
    """Map a derivation key part to a stable non-negative integer."""
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng derivation keys must be int or str, got {type(part).__name__}")


class SeededRng:
    """PCG64-backed generator with labelled, reproducible substreams."""

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = _key
        entropy = (self.seed & 0xFFFFFFFFFFFFFFFF,) + _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, *parts: object) -> "SeededRng":
        """Return an independent stream keyed by (seed, *parts)."""
        key = self._key + tuple(_key_to_int(p) for p in parts)
        return SeededRng(self.seed, key)

    # Draw methods mirror numpy.random.Generator but keep the surface small
    # so the draw order stays easy to document and replay in tests.

    def random(self, size=None) -> np.ndarray | float:
        """Uniform floats in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high), like Generator.integers."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, candidates, size: int, replace: bool = False, p=None) -> np.ndarray:
        return self._gen.choice(candidates, size=size, replace=replace, p=p)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, key={self._key})"
