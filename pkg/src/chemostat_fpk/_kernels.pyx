# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled truncated Euler-Maruyama kernel (see ``_fallback`` for the reference)."""

from libc.math cimport sqrt, log, cos, sin, isfinite, NAN
from libc.stdint cimport uint64_t, int64_t

cdef double PI = 3.141592653589793
cdef double TWO_M53 = 1.1102230246251565e-16
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline void normal_pair(uint64_t key, int64_t counter, double* z1, double* z2) noexcept nogil:
    cdef uint64_t x1 = mix64(key + <uint64_t>(2 * counter + 1) * GOLDEN)
    cdef uint64_t x2 = mix64(key + <uint64_t>(2 * counter + 2) * GOLDEN)
    cdef double u1 = (<double>(x1 >> 11) + 1.0) * TWO_M53
    cdef double u2 = <double>(x2 >> 11) * TWO_M53
    cdef double r = sqrt(-2.0 * log(u1))
    cdef double theta = 2.0 * PI * u2
    z1[0] = r * cos(theta)
    z2[0] = r * sin(theta)


def simulate_paths(double[::1] S, double[::1] B, unsigned char[::1] failed,
                   uint64_t[::1] keys, double[:, ::1] out_S, double[:, ::1] out_B,
                   int64_t[::1] snap_steps, int64_t n_steps, double dt,
                   int growth_kind, double g0, double g1, double g2,
                   int noise_kind, double k, double D, double s_in, double c1, double c2):
    cdef Py_ssize_t n_paths = S.shape[0]
    cdef Py_ssize_t n_snap = snap_steps.shape[0]
    cdef Py_ssize_t p, j, jj
    cdef int64_t n
    cdef double s, b, mu, sig1, sig2, f1, f2, sn, bn, w1, w2
    cdef double sqdt = sqrt(dt)
    with nogil:
        for p in range(n_paths):
            s = S[p]
            b = B[p]
            j = 0
            while j < n_snap and snap_steps[j] == 0:
                out_S[j, p] = s
                out_B[j, p] = b
                j += 1
            n = 0
            while n < n_steps and j < n_snap:
                normal_pair(keys[p], n + 1, &w1, &w2)
                if growth_kind == 0:
                    mu = g0 * s / (g1 + s)
                else:
                    mu = g0 * s / (g1 + s + s * s / g2)
                if noise_kind == 0:
                    sig1 = c1 * sqrt(s)
                    sig2 = c2 * sqrt(b)
                else:
                    sig1 = c1 * s
                    sig2 = c2 * b
                f1 = -k * mu * b + D * (s_in - s)
                f2 = (mu - D) * b
                sn = s + f1 * dt + sig1 * sqdt * w1
                bn = b + f2 * dt + sig2 * sqdt * w2
                if not (isfinite(sn) and isfinite(bn)):
                    failed[p] = 1
                    for jj in range(j, n_snap):
                        out_S[jj, p] = NAN
                        out_B[jj, p] = NAN
                    s = NAN
                    b = NAN
                    j = n_snap
                    break
                s = sn if sn > 0.0 else 0.0
                b = bn if bn > 0.0 else 0.0
                n += 1
                while j < n_snap and snap_steps[j] == n:
                    out_S[j, p] = s
                    out_B[j, p] = b
                    j += 1
            S[p] = s
            B[p] = b
