"""Counter-based 64-bit generator used for every random corruption.

The stream is defined bit-exactly so corrupted outputs can be regenerated
by any implementation:

    GOLDEN = 0x9E3779B97F4A7C15
    mix(z):  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
             z = (z ^ (z >> 27)) * 0x94D049BB133111EB
             return z ^ (z >> 31)                       (all mod 2**64)
    raw(seed, i)     = mix(seed + (i + 1) * GOLDEN)
    uniform(seed, i) = (raw(seed, i) >> 11) * 2**-53     in [0, 1)
    normal(seed, j)  = sqrt(-2 ln(1 - uniform(seed, 2j))) * cos(2 pi uniform(seed, 2j + 1))

i.e. SplitMix64 evaluated at an explicit counter, with Box-Muller for
normals. The transcendental step uses the C math library through Python's
``math`` module, one value at a time, so results do not depend on numpy's
vectorized kernels.
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def raw(seed: int, counters) -> np.ndarray:
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK) + (counters + np.uint64(1)) * np.uint64(GOLDEN)
        return _mix(z)


def uniforms(seed: int, n: int, start: int = 0) -> np.ndarray:
    r = raw(seed, np.arange(start, start + n, dtype=np.uint64))
    return (r >> np.uint64(11)).astype(np.float64) * 2.0**-53


_log = math.log
_cos = math.cos
_sqrt = math.sqrt
_TWO_PI = 2.0 * math.pi


def normals(seed: int, n: int) -> np.ndarray:
    u = uniforms(seed, 2 * n).tolist()
    out = [0.0] * n
    for j in range(n):
        out[j] = _sqrt(-2.0 * _log(1.0 - u[2 * j])) * _cos(_TWO_PI * u[2 * j + 1])
    return np.array(out, dtype=np.float64)
