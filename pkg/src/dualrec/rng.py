"""Seeded randomness with documented sub-stream derivation.

Every random draw in the system funnels through one root seed.  Sub-streams
are derived by extending the SeedSequence entropy with integer path tags, so
``SeededRng(seed).child(STREAM_SHUFFLE, epoch)`` names the same stream in any
process.  PCG64 is platform-independent, which gives bitwise-identical draw
sequences for identical seed paths.

Stream tags (keep stable; they are part of the reproducibility contract):
    STREAM_INIT       parameter initialization
    STREAM_SHUFFLE    per-epoch batch shuffling (path: tag, epoch)
    STREAM_TRAIN_NEG  per-epoch training negatives (path: tag, epoch)
    STREAM_EVAL       evaluation negatives (path: tag, split_code)
    STREAM_SYNTH      synthetic data generation
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor

STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_TRAIN_NEG = 3
STREAM_EVAL = 4
STREAM_SYNTH = 5


class SeededRng:
    """Deterministic PCG64 stream identified by (seed, path) integers."""

    __slots__ = ("seed", "path", "_gen")

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence([self.seed, *self.path])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *path: int) -> "SeededRng":
        """Fresh stream for the extended path; draws here don't advance it."""
        return SeededRng(self.seed, self.path + tuple(path))

    def uniform(self, low: float, high: float, shape: tuple[int, ...] | int) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, n: int, size: int | None = None):
        """Uniform integers in [0, n)."""
        return self._gen.integers(0, n, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size: int | None = None):
        return self._gen.random(size)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"SeededRng(seed={self.seed}, path={self.path})"


def xavier_init(shape: tuple[int, ...], rng: SeededRng) -> Tensor:
    """Uniform Xavier draw on [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].

    Matrices use fan_in=rows, fan_out=cols.  Vectors use their length for
    both fans, so a length-n vector draws from [-sqrt(3/n), +sqrt(3/n)].
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"xavier_init: invalid shape {shape}")
    if len(shape) >= 2:
        fan_in, fan_out = shape[0], shape[-1]
    else:
        fan_in = fan_out = shape[0]
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return Tensor(rng.uniform(-bound, bound, shape))
