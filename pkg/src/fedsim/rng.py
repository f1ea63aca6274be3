"""Seeded, derivable random streams.

Every source of randomness in a run is an :class:`RngStream` derived from a
single root seed by hashing a sequence of integer tags (splitmix64 mixing).
Draws come from numpy's counter-based Philox generator keyed by the derived
stream id, so a stream's output depends only on (seed, stream_id) and the
number of values already consumed -- never on execution order elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One round of the splitmix64 finalizer (public-domain constants)."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _mix(state: int, value: int) -> int:
    return splitmix64(state ^ (value & _MASK64))


@dataclass
class RngStream:
    """Single-consumer random stream.

    ``seed`` is the root experiment seed, ``stream_id`` identifies this
    stream within the run. Identical (seed, stream_id) pairs reproduce the
    same draw sequence on any platform. Concurrent use requires deriving
    child streams; a stream itself is stateful and owned by one consumer.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = _mix(_mix(0, self.seed), self.stream_id)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, *tags: int) -> "RngStream":
        """Pure, order-sensitive derivation of a child stream."""
        sid = self.stream_id
        for t in tags:
            sid = _mix(sid, int(t))
        return RngStream(self.seed, sid)

    # Draw helpers. All delegate to the Philox-backed generator and advance
    # this stream's counter.
    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def dirichlet(self, alpha: np.ndarray) -> np.ndarray:
        return self._gen.dirichlet(alpha)


def derive_stream(root: RngStream, tags: list[int]) -> RngStream:
    """Functional form of :meth:`RngStream.derive`."""
    return root.derive(*tags)
