# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-pixel kernels; see ``_kernels_py`` for the reference twin."""

import numpy as np

from libc.math cimport cos, exp, fabs, floor, log, sqrt
from libc.stdint cimport uint64_t

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double PTRS_THRESHOLD = 10.0
cdef long INVERSION_CAP = 1000
cdef double NORMAL_LIMIT = 4503599627370496.0  # 2**52, see _kernels_py
cdef double TWO_PI = 6.283185307179586

from ._kernels_py import LOGFACT_TABLE, LOGFACT_TABLE_SIZE

cdef double[::1] _logfact = np.ascontiguousarray(LOGFACT_TABLE, dtype=np.float64)
cdef long _logfact_n = LOGFACT_TABLE_SIZE
cdef double _HALF_LOG_2PI = 0.5 * log(TWO_PI)


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, uint64_t j) nogil:
    return <double>(mix64(key + j * GAMMA) >> 11) * INV_2_53


cdef inline double log_factorial(long k) nogil:
    cdef double kf, r, r2
    if k < _logfact_n:
        return _logfact[k]
    kf = <double>k
    r = 1.0 / kf
    r2 = r * r
    return ((kf + 0.5) * log(kf) - kf + _HALF_LOG_2PI
            + r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 / 1260.0)))


cdef long poisson_draw(double mean, uint64_t key) nogil:
    cdef double u, p, s, slam, loglam, b, a, invalpha, vr, U, V, us
    cdef long k
    cdef uint64_t j
    if mean <= 0.0:
        return 0
    if mean < PTRS_THRESHOLD:
        u = uniform(key, 1)
        k = 0
        p = exp(-mean)
        s = p
        while u > s and k < INVERSION_CAP:
            k += 1
            p *= mean / <double>k
            s += p
        return k

    slam = sqrt(mean)
    loglam = log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    j = 0
    while True:
        U = uniform(key, j + 1) - 0.5
        V = uniform(key, j + 2)
        j += 2
        us = 0.5 - fabs(U)
        k = <long>floor((2.0 * a / us + b) * U + mean + 0.43)
        if us >= 0.07 and V <= vr:
            return k
        if k < 0 or (us < 0.013 and V > us):
            continue
        if (log(V) + log(invalpha) - log(a / (us * us) + b)
                <= -mean + <double>k * loglam - log_factorial(k)):
            return k


cdef inline double standard_normal(uint64_t key) nogil:
    cdef double u1 = 1.0 - uniform(key, 1)
    cdef double u2 = uniform(key, 2)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


def pg_sample(x, double a, double b, key_p, key_g, bint exact=True, offset=0):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef uint64_t kp = <uint64_t>key_p
    cdef uint64_t kg = <uint64_t>key_g
    cdef double sb = sqrt(b) if b > 0.0 else 0.0
    cdef double t, xi, var, mean
    cdef uint64_t key
    cdef Py_ssize_t i
    cdef uint64_t idx
    cdef uint64_t base = <uint64_t>offset
    with nogil:
        for i in range(n):
            idx = base + <uint64_t>(i + 1)
            xi = xv[i]
            if exact:
                if a > 0.0:
                    mean = xi / a
                    key = mix64(kp + idx * GAMMA)
                    if mean < NORMAL_LIMIT:
                        t = a * <double>poisson_draw(mean, key)
                    else:
                        t = xi + sqrt(a * xi) * standard_normal(key)
                else:
                    t = xi
                if b > 0.0:
                    t += sb * standard_normal(mix64(kg + idx * GAMMA))
            else:
                var = a * xi + b
                t = xi
                if var > 0.0:
                    t += sqrt(var) * standard_normal(mix64(kg + idx * GAMMA))
            ov[i] = t
    return out


def masked_nll(y, x, mask, double a, double b):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef const unsigned char[::1] mv = np.ascontiguousarray(mask, dtype=np.uint8).ravel()
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t i
    cdef long count = 0
    cdef double total = 0.0
    cdef double v, r
    cdef bint infeasible = False
    with nogil:
        for i in range(n):
            if mv[i]:
                count += 1
                v = a * xv[i] + b
                if v <= 0.0:
                    infeasible = True
                elif not infeasible:
                    r = yv[i] - xv[i]
                    total += r * r / v + log(v)
    if infeasible:
        return float("inf"), count
    return total, count
