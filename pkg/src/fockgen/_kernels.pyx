# cython: language_level=3
"""Compiled inner loops. Contracts mirror ``fockgen._kernels_py`` exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def phase_type(double[::1] q, double[::1] a, long n_max, double eps, long n_cap):
    """Absorption-time PMF of the bidiagonal geometric chain.

    ``q[k]`` leaves state ``k``; ``a[k] = 1 - q[k]`` stays (one photon emitted).
    ``n_max >= 0`` evaluates a fixed range, ``n_max < 0`` runs until the unabsorbed
    mass drops below ``eps`` or ``n_cap`` entries are produced.

    Returns ``(probs, tail)`` with ``tail = P(N > len(probs) - 1)``.
    """
    cdef Py_ssize_t K = q.shape[0]
    cdef Py_ssize_t k, it
    cdef long n, limit
    cdef double tail = 1.0
    cdef double[::1] v = np.zeros(K, dtype=np.float64)
    limit = n_max if n_max >= 0 else n_cap
    out = np.empty(limit + 1, dtype=np.float64)
    cdef double[::1] p = out

    v[0] = 1.0
    n = 0
    with nogil:
        for it in range(K - 1):
            for k in range(K - 1, 0, -1):
                v[k] = v[k] * a[k] + v[k - 1] * q[k - 1]
            v[0] = v[0] * a[0]
        while n <= limit:
            p[n] = v[K - 1] * q[K - 1]
            for k in range(K - 1, 0, -1):
                v[k] = v[k] * a[k] + v[k - 1] * q[k - 1]
            v[0] = v[0] * a[0]
            tail = 0.0
            for k in range(K):
                tail += v[k]
            n += 1
            if n_max < 0 and tail < eps:
                break
    return out[:n].copy(), tail


def joint_table(double lam2, double eta_s, double eta_i,
                long ns_max, long ni_max, long m_max):
    """Signal/idler photon-count table of one lossy two-mode squeezer.

    Sums pair numbers ``m = 0..m_max`` of the geometric pair distribution
    ``(1 - lam2) lam2**m`` through independent binomial loss on each arm.
    """
    out = np.zeros((ns_max + 1, ni_max + 1), dtype=np.float64)
    cdef double[:, ::1] t = out
    cdef double[::1] bs = np.zeros(ns_max + 1, dtype=np.float64)
    cdef double[::1] bi = np.zeros(ni_max + 1, dtype=np.float64)
    cdef double g = 1.0 - lam2
    cdef double ls = 1.0 - eta_s
    cdef double li = 1.0 - eta_i
    cdef double w
    cdef long m, i, j, top_s, top_i

    bs[0] = 1.0
    bi[0] = 1.0
    with nogil:
        for m in range(m_max + 1):
            if g == 0.0:
                break
            top_s = m if m < ns_max else ns_max
            top_i = m if m < ni_max else ni_max
            for i in range(top_s + 1):
                w = g * bs[i]
                if w == 0.0:
                    continue
                for j in range(top_i + 1):
                    t[i, j] += w * bi[j]
            # advance binomial rows from m to m + 1 pairs
            top_s = m + 1 if m + 1 < ns_max else ns_max
            for i in range(top_s, 0, -1):
                bs[i] = bs[i] * ls + bs[i - 1] * eta_s
            bs[0] = bs[0] * ls
            top_i = m + 1 if m + 1 < ni_max else ni_max
            for j in range(top_i, 0, -1):
                bi[j] = bi[j] * li + bi[j - 1] * eta_i
            bi[0] = bi[0] * li
            g = g * lam2
    return out
