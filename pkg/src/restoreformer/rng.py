"""Pinned random number generation.

All randomness in the package flows through :class:`Rng`, a thin wrapper over
numpy's PCG64 bit generator (PCG-XSL-RR 128/64). Uniform doubles come from
``Generator.random`` (53 random bits per double); normal variates are produced
here with the Box-Muller transform, so the normal stream depends only on the
uniform stream and libm ``log``/``cos``/``sin``.
"""
import numpy as np


class Rng:
    def __init__(self, seed, *keys):
        seq = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @classmethod
    def derive(cls, seed, *keys):
        """Independent stream for ``(seed, *keys)``, e.g. one per batch index."""
        return cls(seed, *keys)

    def random(self, size=None):
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self._gen.random(size)

    def normal(self, size=None, mean=0.0, std=1.0):
        scalar = size is None
        shape = (1,) if scalar else ((size,) if np.isscalar(size) else tuple(size))
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u1 = 1.0 - self._gen.random(m)  # (0, 1]
        u2 = self._gen.random(m)
        rad = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([rad * np.cos(theta), rad * np.sin(theta)])[:n]
        out = mean + std * z.reshape(shape)
        return float(out[0]) if scalar else out

    def integers(self, low, high=None, size=None):
        """Uniform integers in [low, high) by scaling uniform doubles."""
        if high is None:
            low, high = 0, low
        u = self._gen.random(size)
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def permutation(self, n):
        return np.argsort(self._gen.random(n), kind="stable")
