"""Counter-based random numbers for reproducible simulations.

Every draw is a pure function of ``(seed, stream, index)``, so datasets can be
regenerated bit-for-bit from the seed alone, independently of call order or
platform.  The construction is simple enough to port:

* ``key = mix64(seed + GOLDEN * (stream + 1))``
* ``bits_i = mix64(key + GOLDEN * (i + 1))``  (all arithmetic mod 2**64)
* ``u_i = ((bits_i >> 11) + 0.5) * 2**-53``, a uniform on the open interval (0, 1)

where ``mix64`` is the SplitMix64 finalizer.  Standard normals come from the
Box-Muller transform applied to consecutive uniform pairs ``(u_{2k}, u_{2k+1})``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _stream_key(seed: int, stream: int) -> np.uint64:
    base = (int(seed) + int(GOLDEN) * (int(stream) + 1)) & _MASK64
    return mix64(np.array([base], dtype=np.uint64))[0]


def uniforms(seed: int, stream: int, count: int, offset: int = 0) -> np.ndarray:
    """Return ``count`` uniforms on (0, 1) from the given stream."""
    key = _stream_key(seed, stream)
    idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    bits = mix64(key + GOLDEN * idx)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normals(seed: int, stream: int, count: int) -> np.ndarray:
    """Return ``count`` standard normal draws via Box-Muller."""
    pairs = (count + 1) // 2
    u = uniforms(seed, stream, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:count]


def permutation(seed: int, stream: int, n: int) -> np.ndarray:
    """Uniform random permutation of ``range(n)`` (stable argsort of uniform keys)."""
    return np.argsort(uniforms(seed, stream, n), kind="stable")
