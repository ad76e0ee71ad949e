"""Photon-number distributions of multimode thermal light.

Each Schmidt mode of a two-mode squeezer contributes a geometric photon-number
distribution with vacuum probability ``q = 1 - tanh(r)**2``. Detectors without
spectral resolution see the convolution over modes, which is evaluated here as
the absorption time of a bidiagonal Markov chain (a discrete phase-type law).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import kernels
from ._kernels_py import binomial_loss_matrix

EPS_TRUNC = 1e-12
K_MAX_DEFAULT = 35
MU_MAX = 1.0 - 1e-9
DELTA_Q = 1e-6
NORM_TOL = 1e-9
N_CAP = 2_000_000


class TruncationError(RuntimeError):
    """Photon-number truncation left more than the allowed tail mass."""

    def __init__(self, message, suggested_n_trunc=None):
        super().__init__(message)
        self.suggested_n_trunc = suggested_n_trunc


class DegenerateModesError(ValueError):
    """Vacuum probabilities too close for the distinct-mode closed form."""


# --------------------------------------------------------------------------- #
# Schmidt spectrum


def schmidt_coefficients(mu, k_max):
    """Exponentially decaying Schmidt coefficients ``sqrt(1 - mu**2) * mu**(k-1)``.

    The squared coefficients of the retained ``k_max`` modes sum to
    ``1 - mu**(2 k_max)``; see :func:`schmidt_residual` for the dropped mass.
    """
    mu = float(mu)
    if not 0.0 <= mu <= MU_MAX:
        raise ValueError(f"mode decay mu must lie in [0, 1), got {mu}")
    k_max = int(k_max)
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    k = np.arange(k_max)
    if mu == 0.0:
        lam = np.zeros(k_max)
        lam[0] = 1.0
        return lam
    return math.sqrt(1.0 - mu * mu) * mu**k


def schmidt_residual(mu, k_max):
    """Squared-coefficient mass of the modes beyond ``k_max``."""
    return float(mu) ** (2 * int(k_max))


def schmidt_number(lambdas, tol=NORM_TOL):
    """Effective mode number ``1 / sum(lambda**4)``."""
    lam = np.asarray(lambdas, dtype=np.float64)
    norm = float(np.sum(lam**2))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"Schmidt coefficients not normalized: sum of squares = {norm!r}")
    return 1.0 / float(np.sum(lam**4))


def mu_from_schmidt_number(K):
    """Mode decay giving Schmidt number ``K`` for an untruncated spectrum."""
    K = float(K)
    if not K >= 1.0:
        raise ValueError(f"Schmidt number must be >= 1, got {K}")
    return math.sqrt((K - 1.0) / (K + 1.0))


@dataclass(frozen=True, eq=False)
class ModeSpectrum:
    """Per-mode squeezing of a multimode two-mode squeezed vacuum.

    ``optical_gain`` scales every mode's squeezing, ``r_k = B * lambda_k``.
    ``mode_decay`` is ``None`` for spectra built from explicit coefficients.
    """

    optical_gain: float
    lambdas: np.ndarray
    mode_decay: float | None = None
    residual: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.optical_gain >= 0.0:
            raise ValueError(f"optical gain must be >= 0, got {self.optical_gain}")
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0 or np.any(lam < 0):
            raise ValueError("lambdas must be a non-empty vector of nonnegative values")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @classmethod
    def from_mu(cls, gain, mu, k_max=K_MAX_DEFAULT):
        return cls(float(gain), schmidt_coefficients(mu, k_max), float(mu), schmidt_residual(mu, k_max))

    @classmethod
    def from_schmidt_number(cls, gain, K, k_max=K_MAX_DEFAULT):
        return cls.from_mu(gain, mu_from_schmidt_number(K), k_max)

    @classmethod
    def equal_modes(cls, gain, n_modes):
        """``n_modes`` modes sharing the squeezing equally."""
        lam = np.full(int(n_modes), 1.0 / math.sqrt(n_modes))
        return cls(float(gain), lam)

    def with_gain(self, gain):
        return type(self)(float(gain), self.lambdas, self.mode_decay, self.residual)

    @property
    def k_max(self):
        return self.lambdas.size

    @property
    def squeezings(self):
        return self.optical_gain * self.lambdas

    @property
    def tanh_params(self):
        return np.tanh(self.squeezings)

    @property
    def emission_probs(self):
        """``1 - q_k = tanh(r_k)**2``, kept separately to avoid cancellation near vacuum."""
        if "emission" not in self._cache:
            self._cache["emission"] = np.tanh(self.squeezings) ** 2
        return self._cache["emission"]

    @property
    def vacuum_probs(self):
        return 1.0 / np.cosh(self.squeezings) ** 2

    @property
    def schmidt_number(self):
        return 1.0 / float(np.sum(self.lambdas**4))


@dataclass(frozen=True)
class LossModel:
    eta_signal: float = 1.0
    eta_idler: float = 1.0

    def __post_init__(self):
        for name in ("eta_signal", "eta_idler"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True, eq=False)
class Pmf:
    """Photon-number PMF on ``0..n_trunc`` plus the mass beyond it."""

    probs: np.ndarray
    tail_mass: float

    @property
    def n_trunc(self):
        return self.probs.size - 1

    def mean(self):
        return float(np.arange(self.probs.size) @ self.probs)

    def __getitem__(self, n):
        return self.probs[n]


# --------------------------------------------------------------------------- #
# PMFs


def _check_vacuum_probs(q):
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if q.ndim != 1 or q.size == 0:
        raise ValueError("vacuum probabilities must be a non-empty vector")
    if np.any(~(q > 0.0)) or np.any(q > 1.0):
        raise ValueError("vacuum probabilities must lie in (0, 1]")
    return q


def phase_type_pmf(q, n_max=None, *, emission=None, eps=EPS_TRUNC):
    """Photon-number PMF of independent thermal modes with vacuum probabilities ``q``.

    Evaluates ``alpha @ M**(n + K - 1) @ M0`` for the upper-bidiagonal matrix
    ``M`` by repeated vector-matrix products.

    Args:
        q: per-mode vacuum probabilities, each in (0, 1].
        n_max: last photon number to evaluate. ``None`` picks the smallest
            range whose tail mass is below ``eps``.
        emission: optional ``1 - q`` computed without cancellation.
        eps: tail tolerance for the adaptive range.

    Returns:
        Pmf
    """
    q = _check_vacuum_probs(q)
    a = 1.0 - q if emission is None else np.atleast_1d(np.asarray(emission, dtype=np.float64))
    if a.shape != q.shape:
        raise ValueError("emission and vacuum probabilities differ in shape")
    if n_max is None:
        probs, tail = kernels.phase_type(q, a, -1, float(eps), N_CAP)
        if tail >= eps:
            raise TruncationError(f"tail mass {tail:.3g} after {N_CAP} photons; mean photon number too large")
    else:
        if int(n_max) < 0:
            raise ValueError("n_max must be >= 0")
        probs, tail = kernels.phase_type(q, a, int(n_max), float(eps), N_CAP)
    return Pmf(probs, max(float(tail), 0.0))


def geometric_pmf(q, n_max):
    """Single thermal mode, ``q * (1 - q)**n``."""
    n = np.arange(int(n_max) + 1)
    return q * (1.0 - q) ** n


def _log_binom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def negative_binomial_pmf(q, K, n):
    """``C(n + K - 1, n) (1 - q)**n q**K``: ``K`` identical thermal modes."""
    q = float(q)
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    K, n = int(K), int(n)
    if K < 1 or n < 0:
        raise ValueError("need K >= 1 and n >= 0")
    if n == 0:
        return q**K
    if q == 1.0:
        return 0.0
    if n <= 30:
        return math.comb(n + K - 1, n) * (1.0 - q) ** n * q**K
    return math.exp(_log_binom(n + K - 1, n) + n * math.log1p(-q) + K * math.log(q))


def distinct_q_pmf(q, n, delta=DELTA_Q):
    """Closed form for modes with pairwise distinct vacuum probabilities.

    Partial fractions of ``prod_j q_j / (1 - (1 - q_j) z)`` give
    ``prod(q) * sum_j (1 - q_j)**(n + K - 1) / prod_{m != j} (q_m - q_j)``.
    With ``q`` decreasing the denominator sign is ``(-1)**(K - j)`` for 1-based ``j``.
    """
    q = np.asarray(q, dtype=np.float64)
    n = int(n)
    if q.ndim != 1 or q.size == 0 or n < 0:
        raise ValueError("need a non-empty vector q and n >= 0")
    if np.any(q <= 0.0) or np.any(q >= 1.0):
        raise ValueError("distinct-mode form needs every q in (0, 1)")
    gaps = -np.diff(q)
    if np.any(gaps <= 0.0):
        raise ValueError("q must be strictly decreasing")
    if q.size > 1 and gaps.min() < delta:
        raise DegenerateModesError(
            f"vacuum probabilities separated by {gaps.min():.3g} < {delta:g}; use phase_type_pmf"
        )
    K = q.size
    total = 0.0
    for j in range(K):
        others = np.delete(q, j)
        total += (1.0 - q[j]) ** (n + K - 1) / np.prod(others - q[j])
    return float(np.prod(q) * total)


def apply_loss(probs, eta):
    """Binomial loss channel on a (truncated) photon-number PMF."""
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.size - 1
    return probs @ binomial_loss_matrix(eta, n, n)


def lossy_thermal_vacuum_prob(q, eta):
    """Vacuum probability of a thermal state after transmission ``eta``."""
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    return q / (q + eta - q * eta)


def lossy_emission(emission, eta):
    """``1 - q'`` from ``1 - q`` without cancellation, elementwise."""
    emission = np.asarray(emission, dtype=np.float64)
    return eta * emission / (1.0 - (1.0 - eta) * emission)


def lossy_squeezing(r, eta):
    """Squeezing parameter of the thermal state seen after transmission ``eta``."""
    if not r >= 0.0:
        raise ValueError(f"r must be >= 0, got {r}")
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    t2 = math.tanh(r) ** 2
    return math.atanh(math.sqrt(eta * t2 / (1.0 + (eta - 1.0) * t2)))
