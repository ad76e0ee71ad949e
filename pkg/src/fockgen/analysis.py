"""Gain sweeps, gain optimisation, feasibility limits and parameter fitting."""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from .distributions import K_MAX_DEFAULT, LossModel, ModeSpectrum
from .herald import (
    fidelity_single_mode,
    herald_distribution,
    herald_probability,
    herald_reports,
    mean_detected_photons,
    multimode_tables,
    _conv_trunc,
)

THREADS_ENV = "FOCKGEN_THREADS"


class ConvergenceError(RuntimeError):
    """An optimiser or root finder failed to converge."""


def thread_count():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------- #
# sweeps


@dataclass(frozen=True, eq=False)
class SweepResult:
    gain_grid: np.ndarray
    n_values: np.ndarray
    per_n_prob: np.ndarray
    per_n_fidelity_single: np.ndarray
    per_n_fidelity_photon_number: np.ndarray
    mean_photons_idler: np.ndarray
    mean_photons_signal: np.ndarray

    @property
    def mean_photons(self):
        return self.mean_photons_idler


def sweep_gain(template, loss, gains, n_list):
    """Heralding probability and both fidelities on a gain grid.

    Rows follow ``gains``, columns follow ``n_list``. Fidelities are NaN where
    the heralding probability vanishes (e.g. zero gain, ``n >= 1``).
    """
    gains = np.asarray(gains, dtype=np.float64)
    if gains.ndim != 1 or gains.size == 0:
        raise ValueError("gain grid must be a non-empty vector")
    if np.any(gains < 0) or np.any(np.diff(gains) <= 0):
        raise ValueError("gain grid must be nonnegative and strictly increasing")
    n_values = np.asarray([int(n) for n in n_list])
    if n_values.size == 0 or np.any(n_values < 0):
        raise ValueError("n list must be non-empty and nonnegative")

    reports = _pmap(lambda b: herald_reports(template.with_gain(b), loss, n_values), gains)
    shape = (gains.size, n_values.size)
    prob, f1, fpn = np.empty(shape), np.empty(shape), np.empty(shape)
    for i, row in enumerate(reports):
        prob[i] = [r.herald_prob for r in row]
        f1[i] = [r.fidelity_single_mode for r in row]
        fpn[i] = [r.fidelity_photon_number for r in row]
    m_i = np.array([row[0].mean_idler_detected for row in reports])
    m_s = np.array([row[0].mean_signal_detected for row in reports])
    return SweepResult(gains, n_values, prob, f1, fpn, m_i, m_s)


# --------------------------------------------------------------------------- #
# gain optimisation


class GainOptimum(NamedTuple):
    gain: float
    prob: float


def gain_for_mean_photons(template, eta, mean):
    """Optical gain at which ``eta * sum(sinh(r_k)**2)`` equals ``mean``."""
    if mean < 0:
        raise ValueError("mean photon number must be >= 0")
    if mean == 0:
        return 0.0
    if eta <= 0:
        raise ValueError("cannot reach a nonzero detected mean with zero transmission")

    def f(b):
        return mean_detected_photons(template.with_gain(b), eta) - mean

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ConvergenceError(f"no gain reaches mean photon number {mean}")
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-14)


def _gain_ceiling(template, loss, n):
    # idler mean of 4 n lies well past the maximum of p_n
    return gain_for_mean_photons(template, max(loss.eta_idler, 1e-6), 4.0 * max(n, 1))


def max_herald_probability(template, loss, n, *, b_hi=None, n_grid=64):
    """Gain maximising the ``n``-photon heralding probability.

    A grid pre-scan brackets the maximum, golden-section search refines it.
    If the scan is not unimodal the best grid point's neighbourhood is refined.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    b_hi = _gain_ceiling(template, loss, n) if b_hi is None else float(b_hi)

    def p(b):
        return herald_probability(template.with_gain(b), loss, n)

    grid = np.linspace(0.0, b_hi, n_grid + 1)[1:]
    vals = np.array([p(b) for b in grid])
    k = int(np.argmax(vals))
    d = np.diff(vals)
    if not (np.all(d[:k] >= 0) and np.all(d[k:] <= 0)):
        warnings.warn(f"p_{n}(B) not unimodal on the pre-scan grid; refining around grid argmax")
    if k == grid.size - 1:
        raise ConvergenceError(f"maximum of p_{n} not bracketed below B={b_hi}")
    lo = grid[k - 1] if k > 0 else 0.5 * grid[0]
    res = minimize_scalar(
        lambda b: -p(b), bracket=(lo, grid[k], grid[k + 1]), method="golden", tol=1e-10
    )
    if not res.success or res.x <= 0:
        raise ConvergenceError(f"golden-section search failed: {res.message}")
    return GainOptimum(float(res.x), float(-res.fun))


def max_fidelity_at_probability(template, loss, n, p_target, *, n_grid=128):
    """Largest single-mode fidelity on the low-gain branch with ``p_n >= p_target``."""
    n = int(n)
    b_star, p_star = max_herald_probability(template, loss, n)
    if p_target > p_star * (1 + 1e-12):
        raise ValueError(f"p_target={p_target} exceeds the maximal heralding probability {p_star}")
    if p_target >= p_star:
        b_lo = b_star
    elif p_target <= 0:
        b_lo = 0.0
    else:
        b_lo = brentq(
            lambda b: herald_probability(template.with_gain(b), loss, n) - p_target,
            0.0, b_star, xtol=1e-14,
        )

    def fid(b):
        return fidelity_single_mode(template.with_gain(b), loss, n)

    if b_lo == 0.0:
        b_lo = b_star * 1e-6
    if b_star - b_lo < 1e-12:
        return fid(b_star)
    grid = np.linspace(b_lo, b_star, n_grid)
    vals = np.array([fid(b) for b in grid])
    k = int(np.argmax(vals))
    if k in (0, grid.size - 1):
        return float(vals[k])
    res = minimize_scalar(lambda b: -fid(b), bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(vals[k], -res.fun))


# --------------------------------------------------------------------------- #
# feasibility


@dataclass(frozen=True, eq=False)
class FeasibilityReport:
    target_fidelity: float
    eta_idler: float
    rep_rate: float
    rate_floor: float
    n_values: np.ndarray
    per_n_max_rate: np.ndarray
    per_n_gain: np.ndarray
    max_feasible_n: int | None

    def to_dict(self):
        return {
            "target_fidelity": self.target_fidelity,
            "eta_idler": self.eta_idler,
            "rep_rate": self.rep_rate,
            "rate_floor": self.rate_floor,
            "n_values": [int(n) for n in self.n_values],
            "per_n_max_rate": [float(r) for r in self.per_n_max_rate],
            "per_n_gain": [float(b) for b in self.per_n_gain],
            "max_feasible_n": self.max_feasible_n,
        }


def constrained_max_probability(template, loss, n, fidelity_floor, *, n_grid=256):
    """Maximise ``p_n`` over the gain subject to single-mode fidelity ``>= fidelity_floor``.

    Returns ``(gain, prob)``; ``(nan, 0.0)`` when no scanned gain is feasible.
    """
    b_star, p_star = max_herald_probability(template, loss, n)
    if fidelity_floor <= 0:
        return b_star, p_star
    b_hi = max(_gain_ceiling(template, loss, n), 2 * b_star)
    grid = np.unique(np.concatenate([
        np.linspace(0.0, b_hi, n_grid + 1)[1:],
        b_hi * np.logspace(-6, 0, n_grid),
        [b_star],
    ]))

    def fgap(b):
        return fidelity_single_mode(template.with_gain(b), loss, n) - fidelity_floor

    gaps = np.array([fgap(b) for b in grid])
    ok = gaps >= 0
    best = (math.nan, 0.0)
    i = 0
    while i < grid.size:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < grid.size and ok[j + 1]:
            j += 1
        lo = grid[i] if i == 0 else brentq(fgap, grid[i - 1], grid[i], xtol=1e-14)
        hi = grid[j] if j == grid.size - 1 else brentq(fgap, grid[j], grid[j + 1], xtol=1e-14)
        b = min(max(b_star, lo), hi)
        p = herald_probability(template.with_gain(b), loss, n)
        if p > best[1]:
            best = (b, p)
        i = j + 1
    return best


def feasibility(rep_rate, eta_idler, fidelity_floor, rate_floor, n_range=range(1, 13), *,
                template=None):
    """Highest Fock number reachable at ``rate_floor`` events per second.

    Assumes emission into one Schmidt mode and a lossless signal arm unless a
    different ``template`` is given.
    """
    if rep_rate <= 0:
        raise ValueError("repetition rate must be positive")
    template = ModeSpectrum.from_mu(1.0, 0.0, 1) if template is None else template
    loss = LossModel(1.0, eta_idler)
    n_values = np.array([int(n) for n in n_range])
    results = _pmap(lambda n: constrained_max_probability(template, loss, n, fidelity_floor), n_values)
    gains = np.array([b for b, _ in results])
    rates = rep_rate * np.array([p for _, p in results])
    feasible = n_values[rates >= rate_floor]
    max_n = int(feasible.max()) if feasible.size else None
    return FeasibilityReport(float(fidelity_floor), float(eta_idler), float(rep_rate), float(rate_floor),
                             n_values, rates, gains, max_n)


# --------------------------------------------------------------------------- #
# fitting


@dataclass(eq=False)
class RunData:
    """Observations of one measurement run (one pump power).

    Arrays are aligned on ``n``. NaN marks a missing value or uncertainty.
    """

    run_id: str
    mean_photons: float
    n: np.ndarray
    herald_prob: np.ndarray
    herald_prob_err_lo: np.ndarray
    herald_prob_err_hi: np.ndarray
    fidelity: np.ndarray
    fidelity_err_lo: np.ndarray
    fidelity_err_hi: np.ndarray

    def __post_init__(self):
        for name in ("n", "herald_prob", "herald_prob_err_lo", "herald_prob_err_hi",
                     "fidelity", "fidelity_err_lo", "fidelity_err_hi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.n = self.n.astype(int)


@dataclass
class FitResult:
    K: float
    eta_idler: float
    eta_signal: float
    per_run_gain: list
    residual: float
    iterations: int
    converged: bool
    underdetermined: bool = False
    n_evaluations: int = 0
    run_ids: list = field(default_factory=list)

    def to_dict(self):
        return {
            "K": self.K,
            "eta_idler": self.eta_idler,
            "eta_signal": self.eta_signal,
            "per_run_gain": dict(zip(self.run_ids, self.per_run_gain)),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "underdetermined": self.underdetermined,
            "n_evaluations": self.n_evaluations,
        }


def model_observables(K, eta_idler, eta_signal, mean_photons, n_prob, n_fid, *,
                      k_max=K_MAX_DEFAULT, arm="idler"):
    """Model heralding probabilities and photon-number fidelities for one run.

    The run's gain is fixed by matching ``mean_photons`` on the chosen arm.
    Returns ``(gain, probs, fidelities)``.
    """
    template = ModeSpectrum.from_schmidt_number(1.0, K, k_max)
    loss = LossModel(eta_signal, eta_idler)
    eta = eta_idler if arm == "idler" else eta_signal
    gain = gain_for_mean_photons(template, eta, mean_photons)
    spec = template.with_gain(gain)
    n_prob = np.asarray(n_prob, dtype=int)
    n_fid = np.asarray(n_fid, dtype=int)
    n_hi = int(max(n_prob.max(initial=0), n_fid.max(initial=0)))
    probs = herald_distribution(spec, loss, n_hi).probs
    fids = np.empty(n_fid.size)
    if n_fid.size:
        first, rest = multimode_tables(spec, loss, int(n_fid.max()))
        full = _conv_trunc(first, rest, int(n_fid.max()))
        for i, n in enumerate(n_fid):
            fids[i] = full[n, n] / probs[n] if probs[n] > 0 else math.nan
    return gain, probs[n_prob], fids


def _residuals(model, obs, lo, hi):
    have = np.isfinite(obs)
    model, obs, lo, hi = model[have], obs[have], lo[have], hi[have]
    sigma = np.where(model > obs, hi, lo)
    weighted = np.isfinite(sigma) & (sigma > 0)
    r = np.empty(obs.size)
    r[weighted] = (model[weighted] - obs[weighted]) / sigma[weighted]
    un = ~weighted
    with np.errstate(divide="ignore", invalid="ignore"):
        r[un] = np.log(np.maximum(model[un], 1e-300)) - np.log(np.maximum(obs[un], 1e-300))
    return r


def fit_objective(theta, runs, *, k_max=K_MAX_DEFAULT, arm="idler"):
    """Weighted sum of squared residuals over all runs."""
    K, eta_i, eta_s = theta
    total = 0.0
    for run in runs:
        fid_mask = np.isfinite(run.fidelity)
        _, probs, fids = model_observables(K, eta_i, eta_s, run.mean_photons, run.n, run.n[fid_mask],
                                           k_max=k_max, arm=arm)
        rp = _residuals(probs, run.herald_prob, run.herald_prob_err_lo, run.herald_prob_err_hi)
        rf = _residuals(fids, run.fidelity[fid_mask], run.fidelity_err_lo[fid_mask],
                        run.fidelity_err_hi[fid_mask])
        total += float(rp @ rp + rf @ rf)
    return total


START_K = (1.0, 1.5, 2.0, 3.0)
START_ETA = (0.3, 0.6, 0.9)
BOUNDS = ((1.0, 10.0), (1e-3, 1.0), (1e-3, 1.0))


def fit_parameters(runs, k_max=K_MAX_DEFAULT, *, arm="idler", n_refine=3, max_iter=4000,
                   xatol=1e-8, fatol=1e-10):
    """Fit Schmidt number and both arm transmissions to measured runs.

    Every point of the start grid (K x eta_idler x eta_signal) is scored, then
    bounded Nelder-Mead searches start from the ``n_refine`` best points.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("no runs to fit")
    underdetermined = len(runs) < 2
    if underdetermined:
        warnings.warn("single run: Schmidt number and transmissions are under-determined")

    def obj(theta):
        try:
            return fit_objective(theta, runs, k_max=k_max, arm=arm)
        except (ValueError, ArithmeticError, RuntimeError):
            return math.inf

    starts = [(k, ei, es) for k in START_K for ei in START_ETA for es in START_ETA]
    scores = _pmap(obj, starts)
    order = np.argsort(scores, kind="stable")[: max(1, n_refine)]

    def refine(x0):
        return minimize(obj, x0, method="Nelder-Mead", bounds=BOUNDS,
                        options={"xatol": xatol, "fatol": fatol, "maxiter": max_iter,
                                 "maxfev": 4 * max_iter})

    results = _pmap(refine, [starts[i] for i in order])
    best = min(results, key=lambda r: (r.fun, tuple(r.x)))
    K, eta_i, eta_s = (float(v) for v in best.x)
    eta = eta_i if arm == "idler" else eta_s
    template = ModeSpectrum.from_schmidt_number(1.0, K, k_max)
    gains = [gain_for_mean_photons(template, eta, r.mean_photons) for r in runs]
    return FitResult(
        K, eta_i, eta_s, gains, float(best.fun), int(best.nit), bool(best.success),
        underdetermined, int(sum(r.nfev for r in results)) + len(starts), [r.run_id for r in runs],
    )


def synthesize_runs(K, eta_idler, eta_signal, gains, *, n_prob=range(0, 8), n_fid=range(1, 5),
                    noise=0.0, rel_err=0.01, seed=None, k_max=K_MAX_DEFAULT):
    """Model datasets at known parameters, optionally with multiplicative Gaussian noise.

    Uncertainties are ``rel_err`` times the noiseless value on both sides.
    """
    rng = np.random.default_rng(seed)
    template = ModeSpectrum.from_schmidt_number(1.0, K, k_max)
    loss = LossModel(eta_signal, eta_idler)
    n_prob = np.asarray(list(n_prob), dtype=int)
    n_fid = set(int(n) for n in n_fid)
    runs = []
    for r, b in enumerate(gains):
        spec = template.with_gain(b)
        reps = herald_reports(spec, loss, n_prob)
        p = np.array([x.herald_prob for x in reps])
        f = np.array([x.fidelity_photon_number if x.target_n in n_fid else math.nan for x in reps])
        p_obs = p * (1 + noise * rng.standard_normal(p.size)) if noise else p.copy()
        f_obs = f * (1 + noise * rng.standard_normal(f.size)) if noise else f.copy()
        runs.append(RunData(
            f"run{r}", reps[0].mean_idler_detected, n_prob,
            p_obs, rel_err * p, rel_err * p, f_obs, rel_err * f, rel_err * f,
        ))
    return runs


__all__ = [
    "ConvergenceError",
    "FeasibilityReport",
    "FitResult",
    "GainOptimum",
    "RunData",
    "SweepResult",
    "constrained_max_probability",
    "feasibility",
    "fit_objective",
    "fit_parameters",
    "gain_for_mean_photons",
    "max_fidelity_at_probability",
    "max_herald_probability",
    "model_observables",
    "sweep_gain",
    "synthesize_runs",
]
