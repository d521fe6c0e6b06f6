"""Deterministic counter-based random streams.

All randomness in the package flows through :class:`Rng`: a Philox (4x64)
counter-based generator keyed by a 128-bit value folded from ``(seed, path)``
with splitmix64. Gaussian variates use Box-Muller over Philox uniforms so the
stream does not depend on numpy's internal normal algorithm. Child streams are
derived by path, never by drawing, so consumers can be added or reordered
without disturbing each other.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["Rng", "derive_seed"]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _path_item_to_int(item) -> int:
    if isinstance(item, str):
        return zlib.crc32(item.encode("utf-8"))
    if isinstance(item, (int, np.integer)):
        return int(item) & _MASK64
    raise TypeError(f"rng path items must be int or str, got {type(item).__name__}")


def _fold_key(seed: int, path: tuple) -> int:
    """128-bit Philox key from a seed and a derivation path."""
    lo = _splitmix64(seed & _MASK64)
    hi = _splitmix64(lo ^ 0xD1B54A32D192ED03)
    for item in path:
        v = _splitmix64(_path_item_to_int(item))
        lo = _splitmix64(lo ^ v)
        hi = _splitmix64(hi ^ _splitmix64(v ^ 0xA0761D6478BD642F))
    return (hi << 64) | lo


def derive_seed(seed: int, *path) -> int:
    """A 64-bit seed deterministically derived from (seed, path)."""
    return _fold_key(seed, path) & _MASK64


class Rng:
    """Reproducible random stream; same (seed, path) gives the same bits."""

    algorithm = "philox4x64-boxmuller"

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed) & _MASK64
        self.path = tuple(path)
        self._gen = np.random.Generator(np.random.Philox(key=_fold_key(self.seed, self.path)))

    def derive(self, *path) -> "Rng":
        """Independent child stream addressed by path elements (ints or strings)."""
        return Rng(self.seed, self.path + tuple(path))

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms in [0, 1)."""
        return self._gen.random(size=shape, dtype=np.float64)

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller; pairs are drawn per call, no carry-over."""
        n = int(np.prod(shape)) if shape != () else 1
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(size=m, dtype=np.float64)  # (0, 1], log-safe
        u2 = self._gen.random(size=m, dtype=np.float64)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        return z.reshape(shape) if shape != () else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path!r})"
