"""Counter-based SplitMix64 random streams.

Stream definition (bit-exact, platform independent):

* word ``i`` (i = 0, 1, ...) of stream ``seed`` is
  ``mix64(seed + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)`` where ``mix64`` is
  the SplitMix64 finalizer
  ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31``.
* uniform doubles in [0, 1) are ``(word >> 11) * 2**-53``.
* normals use Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``r = sqrt(-2 log(1 - u1))``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``;
  a trailing odd element is dropped.

The integer words and uniforms are bit-exact everywhere.  Normals additionally
depend on the platform libm for ``log``/``cos``/``sin``.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import Tensor

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def random_words(n: int, seed: int) -> np.ndarray:
    """First ``n`` 64-bit words of stream ``seed``."""
    base = np.uint64(int(seed) & _MASK)
    counter = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(base + counter * GOLDEN)


def uniform01(n: int, seed: int) -> np.ndarray:
    return (random_words(n, seed) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def normal01(n: int, seed: int) -> np.ndarray:
    pairs = (n + 1) // 2
    u = uniform01(2 * pairs, seed).reshape(pairs, 2)
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    out = np.empty((pairs, 2))
    out[:, 0] = r * np.cos(theta)
    out[:, 1] = r * np.sin(theta)
    return out.reshape(-1)[:n]


def rng_uniform(shape, seed: int, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    shape = tuple(shape)
    n = int(np.prod(shape))
    return Tensor((lo + (hi - lo) * uniform01(n, seed)).reshape(shape))


def rng_normal(shape, seed: int) -> Tensor:
    shape = tuple(shape)
    return Tensor(normal01(int(np.prod(shape)), seed).reshape(shape))


def derive_seed(seed: int, *keys) -> int:
    """Fold ``keys`` (ints or strings) into ``seed`` to get an independent stream seed."""
    state = int(seed) & _MASK
    for key in keys:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")
        word = random_words(1, (int(key) & _MASK) ^ state)[0]
        state = int(word)
    return state
