"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def phase_type(q, a, n_max, eps, n_cap):
    q = np.asarray(q, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    K = q.shape[0]
    v = np.zeros(K)
    v[0] = 1.0
    limit = n_max if n_max >= 0 else n_cap
    out = np.empty(limit + 1)

    def step(v):
        nxt = v * a
        nxt[1:] += v[:-1] * q[:-1]
        return nxt

    for _ in range(K - 1):
        v = step(v)
    n = 0
    tail = 1.0
    while n <= limit:
        out[n] = v[K - 1] * q[K - 1]
        v = step(v)
        tail = float(v.sum())
        n += 1
        if n_max < 0 and tail < eps:
            break
    return out[:n].copy(), tail


def joint_table(lam2, eta_s, eta_i, ns_max, ni_max, m_max):
    m = np.arange(m_max + 1)
    with np.errstate(under="ignore"):
        g = (1.0 - lam2) * np.power(lam2, m, dtype=np.float64)
    bs = binomial_loss_matrix(eta_s, m_max, ns_max)
    bi = binomial_loss_matrix(eta_i, m_max, ni_max)
    return (bs * g[:, None]).T @ bi


def binomial_loss_matrix(eta, m_max, k_max):
    """``L[m, k] = C(m, k) eta**k (1 - eta)**(m - k)`` for ``k <= k_max``."""
    out = np.zeros((m_max + 1, k_max + 1))
    row = np.zeros(k_max + 1)
    row[0] = 1.0
    for m in range(m_max + 1):
        out[m] = row
        nxt = row * (1.0 - eta)
        nxt[1:] += row[:-1] * eta
        row = nxt
    return out
