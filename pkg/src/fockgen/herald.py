"""Joint signal/idler statistics, heralding probabilities and heralded-state fidelities.

Photon-number heralding averages over phases, so the heralded signal state is
diagonal in the Fock basis of each Schmidt mode and every fidelity to ``|n>``
reduces to a ratio of joint count probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from . import kernels
from .distributions import (
    EPS_TRUNC,
    LossModel,
    ModeSpectrum,
    Pmf,
    TruncationError,
    lossy_emission,
    phase_type_pmf,
)

P_MIN = 1e-300
VACUUM_CUTOFF = 1e-14
PAIR_TOL = 1e-17


class UndefinedFidelityError(ArithmeticError):
    """Heralding probability too small for the conditional state to be defined."""


@dataclass(frozen=True, eq=False)
class JointPmf:
    table: np.ndarray
    tail_mass: float

    @property
    def n_trunc(self):
        return self.table.shape[0] - 1

    def signal_marginal(self):
        return self.table.sum(axis=1)

    def idler_marginal(self):
        return self.table.sum(axis=0)


@dataclass(frozen=True)
class HeraldReport:
    target_n: int
    herald_prob: float
    fidelity_single_mode: float
    fidelity_photon_number: float
    mean_idler_detected: float
    mean_signal_detected: float


def _pair_cutoff(lam2, n_hi, tol=PAIR_TOL):
    # pair numbers beyond the cutoff carry less than ``tol`` relative weight
    if lam2 <= 0.0:
        return int(n_hi)
    extra = math.ceil(math.log(tol) / math.log(lam2))
    return int(n_hi) + max(extra, 1)


def _check_lambda(Lambda):
    if not 0.0 <= Lambda < 1.0:
        raise ValueError(f"tanh parameter must lie in [0, 1), got {Lambda}")


def joint_lossy_pmf(Lambda, loss, n_trunc=None, eps=EPS_TRUNC):
    """Joint detected-count table of one two-mode squeezed mode under loss.

    Args:
        Lambda: ``tanh(r)`` of the mode.
        loss: arm transmissions.
        n_trunc: largest count kept on each arm. ``None`` picks the smallest
            value that leaves less than ``eps`` outside the table.
        eps: allowed tail mass.

    Raises:
        TruncationError: if an explicit ``n_trunc`` leaves ``eps`` or more
            outside the table. ``suggested_n_trunc`` carries a sufficient value.
    """
    _check_lambda(Lambda)
    lam2 = Lambda * Lambda
    a_s = float(lossy_emission(lam2, loss.eta_signal))
    a_i = float(lossy_emission(lam2, loss.eta_idler))
    # marginals are geometric: P(count > N) = a**(N + 1)
    a_hi = max(a_s, a_i)
    needed = 0 if a_hi == 0.0 else max(0, math.ceil(math.log(eps / 4.0) / math.log(a_hi)) - 1)
    if n_trunc is None:
        n_trunc = needed
    n_trunc = int(n_trunc)
    m_max = _pair_cutoff(lam2, n_trunc)
    table = kernels.joint_table(lam2, loss.eta_signal, loss.eta_idler, n_trunc, n_trunc, m_max)
    tail = max(0.0, 1.0 - float(table.sum()))
    if tail >= eps:
        raise TruncationError(f"tail mass {tail:.3g} >= {eps:g} at n_trunc={n_trunc}", needed)
    return JointPmf(table, tail)


def signal_vacuum_row(lam2, loss, n_max):
    """Idler counts jointly with zero signal counts, closed form.

    Equal to row 0 of :func:`joint_lossy_pmf`, a scaled geometric sequence.
    """
    y = lam2 * (1.0 - loss.eta_signal)
    denom = 1.0 - y * (1.0 - loss.eta_idler)
    i = np.arange(int(n_max) + 1)
    return (1.0 - lam2) / denom * (loss.eta_idler * y / denom) ** i


def _active(lam2, loss):
    return lam2 * max(loss.eta_signal, loss.eta_idler) >= VACUUM_CUTOFF


def _mode_table(lam2, loss, n_max):
    return kernels.joint_table(
        lam2, loss.eta_signal, loss.eta_idler, n_max, n_max, _pair_cutoff(lam2, n_max)
    )


def _conv_trunc(a, b, n_max):
    return convolve2d(a, b)[: n_max + 1, : n_max + 1]


def multimode_tables(spec, loss, n_max):
    """Exact joint count tables up to ``n_max`` per arm.

    Returns ``(first, rest)``: the target (k = 1) mode's table and the
    convolution of every other mode's table. Modes whose detected emission is
    below ``VACUUM_CUTOFF`` on both arms are treated as vacuum.
    """
    lam2 = spec.emission_probs
    first = _mode_table(float(lam2[0]), loss, n_max)
    rest = np.zeros((n_max + 1, n_max + 1))
    rest[0, 0] = 1.0
    for l2 in lam2[1:]:
        if _active(l2, loss):
            rest = _conv_trunc(rest, _mode_table(float(l2), loss, n_max), n_max)
    return first, rest


def herald_distribution(spec, loss, n_max=None):
    """Detected idler photon-number PMF (independent of signal loss)."""
    a = lossy_emission(spec.emission_probs, loss.eta_idler)
    q = (1.0 - spec.emission_probs) / (1.0 - (1.0 - loss.eta_idler) * spec.emission_probs)
    return phase_type_pmf(q, n_max, emission=a)


def herald_probability(spec, loss, n):
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    return float(herald_distribution(spec, loss, n).probs[n])


def _ratio(num, p_n, n):
    if p_n < P_MIN:
        raise UndefinedFidelityError(f"heralding probability {p_n:.3g} for n={n} below {P_MIN:g}")
    return min(max(num / p_n, 0.0), 1.0)


def _single_mode_numerator(first, rest, n):
    # target mode holds n signal photons; all other modes leave the signal empty
    return float(np.dot(first[n, n::-1], rest[0, : n + 1]))


def fidelity_single_mode(spec, loss, n):
    """Fidelity of the heralded signal to ``|n>`` in the dominant Schmidt mode."""
    n = int(n)
    first, rest = multimode_tables(spec, loss, n)
    return _ratio(_single_mode_numerator(first, rest, n), herald_probability(spec, loss, n), n)


def fidelity_photon_number(spec, loss, n):
    """Probability of ``n`` signal counts in total given ``n`` idler counts."""
    n = int(n)
    first, rest = multimode_tables(spec, loss, n)
    full = _conv_trunc(first, rest, n)
    return _ratio(float(full[n, n]), herald_probability(spec, loss, n), n)


def mean_detected_photons(spec, eta):
    return float(eta * np.sum(np.sinh(spec.squeezings) ** 2))


def herald_reports(spec, loss, n_values):
    """Reports for several target numbers sharing one table computation.

    Fidelities are NaN where the heralding probability vanishes.
    """
    n_values = [int(n) for n in n_values]
    n_hi = max(n_values)
    probs = herald_distribution(spec, loss, n_hi).probs
    first, rest = multimode_tables(spec, loss, n_hi)
    full = _conv_trunc(first, rest, n_hi)
    m_i = mean_detected_photons(spec, loss.eta_idler)
    m_s = mean_detected_photons(spec, loss.eta_signal)
    out = []
    for n in n_values:
        p = float(probs[n])
        if p < P_MIN:
            f1 = fpn = math.nan
        else:
            f1 = _ratio(_single_mode_numerator(first, rest, n), p, n)
            fpn = _ratio(float(full[n, n]), p, n)
        out.append(HeraldReport(n, p, f1, fpn, m_i, m_s))
    return out


def herald_report(spec, loss, n):
    return herald_reports(spec, loss, [n])[0]


__all__ = [
    "HeraldReport",
    "JointPmf",
    "LossModel",
    "ModeSpectrum",
    "Pmf",
    "UndefinedFidelityError",
    "fidelity_photon_number",
    "fidelity_single_mode",
    "herald_distribution",
    "herald_probability",
    "herald_report",
    "herald_reports",
    "joint_lossy_pmf",
    "mean_detected_photons",
    "multimode_tables",
    "signal_vacuum_row",
]
