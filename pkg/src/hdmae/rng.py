"""Deterministic counter-based random streams (splitmix64).

Every random draw in this package comes from an `RngStream`, a counter-based
generator that is fully specified here so streams can be reproduced bit-for-bit
by any implementation:

  raw draw k (0-based):   out_k = mix64((seed + (k + 1) * GAMMA) mod 2^64)
  GAMMA  = 0x9E3779B97F4A7C15
  mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
            z ^= z >> 27; z *= 0x94D049BB133111EB;
            z ^= z >> 31            (all on 64-bit unsigned words)

Derived variates, in the order they consume raw draws:

  uniform       u = (out >> 11) * 2^-53                  in [0, 1)
  open uniform  u = ((out >> 11) + 0.5) * 2^-53          in (0, 1)
  normal        Box-Muller on pairs (u1 open, u2 half-open):
                z0 = sqrt(-2 ln u1) cos(2 pi u2),
                z1 = sqrt(-2 ln u1) sin(2 pi u2);
                n values consume 2*ceil(n/2) raw draws
  gumbel        g = -ln(-ln(u_open)), one raw draw each
  trunc normal  standard normals redrawn (in stream order) until |z| <= 2,
                then scaled by std
  permutation   Fisher-Yates, swap index j = floor(u * (i + 1)) for
                i = n-1 .. 1, one half-open uniform per i

Streams are split per purpose from a single run seed:

  sub_seed(seed, purpose) = (seed + 1000 * purpose) mod 2^64
  purposes: INIT = 1 (parameter init), MASK = 2 (mask plans), DATA = 3
  (dataset order / batch shuffling)

The stream cursor is just (seed, counter); checkpoints store the counter.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_U64 = 1 << 64

PURPOSE_INIT = 1
PURPOSE_MASK = 2
PURPOSE_DATA = 3


def sub_seed(seed: int, purpose: int) -> int:
    """Derive the per-purpose sub-seed: (seed + 1000 * purpose) mod 2^64."""
    return (seed + 1000 * purpose) % _U64


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """One splitmix64 stream identified by (seed, counter)."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) % _U64
        self.counter = int(counter)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words; advances the counter by n."""
        # (seed + k*GAMMA) mod 2^64 for k = counter+1 .. counter+n, in
        # wrapping uint64 arithmetic
        ks = (np.uint64(self.counter % _U64) + np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(
            GAMMA
        )
        ks = ks + np.uint64(self.seed)
        self.counter += n
        return _mix64(ks)

    def uniform(self, shape) -> np.ndarray:
        """iid uniforms in [0, 1), float64, C order."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def uniform_open(self, shape) -> np.ndarray:
        """iid uniforms in (0, 1); safe under log()."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        u = ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """iid standard normals via Box-Muller."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        pairs = (n + 1) // 2
        u1 = self.uniform_open(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def gumbel(self, shape) -> np.ndarray:
        """iid standard Gumbel variates, -ln(-ln(U))."""
        return -np.log(-np.log(self.uniform_open(shape)))

    def trunc_normal(self, shape, std: float = 1.0) -> np.ndarray:
        """Normals rejected outside |z| <= 2, then scaled by std."""
        n = int(np.prod(shape)) if not np.isscalar(shape) else int(shape)
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            z = self.normal(n - filled)
            z = z[np.abs(z) <= 2.0]
            out[filled : filled + z.size] = z
            filled += z.size
        return (out * std).reshape(shape)

    def perm(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        p = np.arange(n, dtype=np.int64)
        if n < 2:
            return p
        u = self.uniform(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            p[i], p[j] = p[j], p[i]
        return p
