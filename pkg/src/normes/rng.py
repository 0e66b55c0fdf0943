"""Reproducible Gaussian streams.

Every random draw in the package goes through :class:`GaussianStream`:
a Philox-4x64 counter-based generator keyed by ``(seed, stream)`` whose
64-bit outputs are turned into doubles with 53 bits of mantissa, then into
standard normals with the Box-Muller transform.  Both the generator and the
transform are fully specified, so a seed reproduces the same numbers on any
platform with IEEE-754 doubles and a correctly rounded ``log``/``sqrt``.

Stream splitting: replica ``i`` of a run with master seed ``s`` uses key
``(s, i + 1)``; stream ``0`` is reserved for the master sequence itself.
"""

from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi
_MASK64 = (1 << 64) - 1


class GaussianStream:
    """Standard-normal and uniform draws from a keyed Philox counter."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def __repr__(self):
        return f"GaussianStream(seed={self.seed}, stream={self.stream})"

    def spawn(self, index: int) -> "GaussianStream":
        """Child stream for replica ``index`` of this master seed."""
        return GaussianStream(self.seed, index + 1)

    def uniform(self, size) -> np.ndarray:
        """Doubles in [0, 1) with 53 random mantissa bits."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        raw = self._bits.random_raw(n) if n else np.empty(0, dtype=np.uint64)
        return ((raw >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        # 1 - u lies in (0, 1], keeping the log finite
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        angle = _TWO_PI * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n].reshape(shape)


def as_stream(rng, stream: int = 0) -> GaussianStream:
    """Accept a seed or an existing stream."""
    if isinstance(rng, GaussianStream):
        return rng
    return GaussianStream(int(rng), stream)
