"""Counter-based random streams.

Every random draw in the package goes through :class:`RngStream`. Streams are
Philox generators keyed by a 64-bit seed; child streams are derived from the
parent seed plus integer tags, so per-index streams never depend on how many
siblings exist or in which order they are created.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_for(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)


class RngStream:
    """Deterministic stream identified by ``(seed, counter)``.

    Parameters
    ----------
    seed : int
        64-bit seed. Larger integers are reduced modulo 2**64.
    counter : int
        Starting Philox block counter. Two streams built from the same
        ``(seed, counter)`` produce bit-identical draws.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self._bitgen = np.random.Philox(key=_key_for(self.seed), counter=int(counter))
        self.gen = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        words = self._bitgen.state["state"]["counter"]
        return int(words[0]) | (int(words[1]) << 64)

    def derive(self, *tags: int) -> "RngStream":
        """Child stream keyed by ``(seed, *tags)``; does not advance this stream."""
        mixed = np.random.SeedSequence([self.seed, *[int(t) & _MASK64 for t in tags]])
        child_seed = int(mixed.generate_state(1, dtype=np.uint64)[0])
        return RngStream(child_seed)

    def normal(self, size=None) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self.gen.integers(low, high, size)

    def complex_normal(self, shape) -> np.ndarray:
        """Complex Gaussian with independent N(0, 1) real and imaginary parts.

        For ``shape = (..., d)`` the draw is a single real block of shape
        ``(..., 2d)`` split as ``[re | im]``.
        """
        shape = tuple(np.atleast_1d(shape))
        d = shape[-1]
        raw = self.gen.standard_normal(shape[:-1] + (2 * d,))
        return raw[..., :d] + 1j * raw[..., d:]

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"


def stage_seed(master_seed: int, tag: int) -> int:
    """Seed for a pipeline stage (data=1, train=2, sample=3, eval=4)."""
    return RngStream(master_seed).derive(tag).seed
