"""Pure-Python per-pixel kernels.

Reference twin of ``_kernels.pyx``.  The sampler is written as a scalar loop
over ``math`` functions on purpose: CPython's ``math.exp``/``log``/``cos``
call the same libm routines the compiled kernel does, so both backends
produce bit-identical samples.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import GAMMA, INV_2_53, MASK64, mix64

PTRS_THRESHOLD = 10.0
INVERSION_CAP = 1000
# above this Poisson mean the draw is replaced by its normal limit (skewness
# below 1.5e-8), which also keeps integer conversion in range
NORMAL_LIMIT = 2.0 ** 52
LOGFACT_TABLE_SIZE = 1024
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

LOGFACT_TABLE = np.array([math.lgamma(k + 1.0) for k in range(LOGFACT_TABLE_SIZE)])
_LOGFACT = LOGFACT_TABLE.tolist()


def log_factorial(k: int) -> float:
    if k < LOGFACT_TABLE_SIZE:
        return _LOGFACT[k]
    kf = float(k)
    r = 1.0 / kf
    r2 = r * r
    return ((kf + 0.5) * math.log(kf) - kf + _HALF_LOG_2PI
            + r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 / 1260.0)))


def _uniform(key: int, j: int) -> float:
    return (mix64((key + j * GAMMA) & MASK64) >> 11) * INV_2_53


def poisson_draw(mean: float, key: int) -> int:
    """One Poisson variate from the substream ``key``.

    Sequential-search inversion below ``PTRS_THRESHOLD``, Hormann's
    transformed rejection with squeeze (PTRS) above it.
    """
    if mean <= 0.0:
        return 0
    if mean < PTRS_THRESHOLD:
        u = _uniform(key, 1)
        k = 0
        p = math.exp(-mean)
        s = p
        while u > s and k < INVERSION_CAP:
            k += 1
            p *= mean / k
            s += p
        return k

    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    j = 0
    while True:
        U = _uniform(key, j + 1) - 0.5
        V = _uniform(key, j + 2)
        j += 2
        us = 0.5 - abs(U)
        k = int(math.floor((2.0 * a / us + b) * U + mean + 0.43))
        if us >= 0.07 and V <= vr:
            return k
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (math.log(V) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -mean + k * loglam - log_factorial(k)):
            return k


def standard_normal(key: int) -> float:
    u1 = 1.0 - _uniform(key, 1)
    u2 = _uniform(key, 2)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def pg_sample(x, a: float, b: float, key_p: int, key_g: int, exact: bool = True,
              offset: int = 0) -> np.ndarray:
    """Per-pixel Poisson-Gaussian corruption of a flat float64 array.

    ``exact`` draws ``a * Poisson(x / a)``; otherwise the signal-dependent part
    is the Gaussian approximation ``N(x, a x)``.  Gaussian noise of variance
    ``b`` is added in both cases.  Pixel ``i`` uses the ``offset+i+1``-th
    substream of each key, so a block starting at flat index ``offset`` draws
    exactly what it would inside the whole image.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    sb = math.sqrt(b)
    for i, xi in enumerate(x.tolist()):
        n = offset + i + 1
        if exact:
            if a > 0.0:
                mean = xi / a
                key = mix64((key_p + n * GAMMA) & MASK64)
                if mean < NORMAL_LIMIT:
                    t = a * poisson_draw(mean, key)
                else:
                    t = xi + math.sqrt(a * xi) * standard_normal(key)
            else:
                t = xi
            if b > 0.0:
                t += sb * standard_normal(mix64((key_g + n * GAMMA) & MASK64))
        else:
            var = a * xi + b
            t = xi
            if var > 0.0:
                t += math.sqrt(var) * standard_normal(mix64((key_g + n * GAMMA) & MASK64))
        out[i] = t
    return out


def masked_nll(y, x, mask, a: float, b: float):
    """Sum of ``(y-x)^2/(a x+b) + log(a x+b)`` over ``mask`` and the count.

    Returns ``(inf, count)`` if any included pixel has ``a x + b <= 0``.
    """
    m = np.asarray(mask, dtype=bool)
    xm = x[m]
    v = a * xm + b
    count = int(xm.size)
    if count and v.min() <= 0.0:
        return math.inf, count
    r = y[m] - xm
    return float(np.sum(r * r / v + np.log(v))), count
