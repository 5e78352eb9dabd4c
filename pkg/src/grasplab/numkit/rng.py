"""Deterministic seeded randomness.

Every random draw in the library flows through :class:`RngStream`, which wraps
numpy's Philox 4x64 counter-based bit generator keyed by ``(seed, stream_id)``.
Philox is fully specified, so the uniform stream is reproducible across runs,
platforms, and implementation languages. The derived draws are likewise pinned
to documented transforms:

* uniforms: 53-bit doubles in [0, 1) straight from the generator
* normals: Box-Muller on uniform pairs (``z0 = sqrt(-2 ln u1) cos(2 pi u2)``,
  ``z1 = sqrt(-2 ln u1) sin(2 pi u2)``, consumed interleaved)
* integers in [0, n): ``floor(u * n)``
* permutations: Fisher-Yates driven by the integer draws above

Distinct ``(seed, stream_id)`` pairs key distinct Philox streams and therefore
never share state.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError, ParameterError

__all__ = ["RngStream"]


class RngStream:
    """A named, reproducible random stream.

    Parameters
    ----------
    seed:
        64-bit seed. The same seed always yields the same sequence.
    stream_id:
        Optional sub-stream selector; streams with different ids are
        independent even under the same seed.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ParameterError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def derive(self, stream_id: int) -> "RngStream":
        """A fresh independent stream under the same seed."""
        return RngStream(self.seed, stream_id)

    # -- uniform draws --------------------------------------------------

    def uniform(self, shape=None) -> np.ndarray | float:
        """Uniform [0, 1) doubles; scalar when shape is None."""
        if shape is None:
            return float(self._gen.random())
        return self._gen.random(shape)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) via floor(u * n)."""
        if n <= 0:
            raise ParameterError(f"randint upper bound must be positive, got {n}")
        return int(self._gen.random() * n)

    def integers(self, n: int, size) -> np.ndarray:
        """Array of uniform integers in [0, n)."""
        if n <= 0:
            raise ParameterError(f"integers upper bound must be positive, got {n}")
        return np.floor(self._gen.random(size) * n).astype(np.int64)

    # -- normals ----------------------------------------------------------

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """I.i.d. Gaussian draws via Box-Muller; ``std=0`` is the constant mean."""
        if std < 0:
            raise DomainError(f"standard deviation must be >= 0, got {std}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        if std == 0.0:
            return np.full(shape, float(mean), dtype=np.float64)
        pairs = (n + 1) // 2
        # 1 - u maps [0, 1) to (0, 1] so the log argument is never zero.
        u1 = 1.0 - self._gen.random(pairs)
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(2.0 * math.pi * u2)
        z[1::2] = r * np.sin(2.0 * math.pi * u2)
        return (mean + std * z[:n]).reshape(shape)

    # -- permutations ------------------------------------------------------

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of [0, n)."""
        if n <= 0:
            raise ParameterError(f"permutation length must be positive, got {n}")
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffle(self, values: np.ndarray) -> np.ndarray:
        """Return a Fisher-Yates shuffled copy of a 1-D array."""
        arr = np.asarray(values)
        return arr[self.permutation(len(arr))]
