"""Transition-edge-sensor ingest: pulse-area histograms to photon-number counts.

Each photon number produces a Gaussian peak in the pulse-area histogram.
Acceptance windows split the axis at midpoints between fitted centres; the
Gaussian tails that cross window borders give asymmetric count uncertainties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks
from scipy.special import ndtr
from scipy.stats import binomtest, norm

BERNOULLI_EXACT_BELOW = 10_000


class MixtureFitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True, eq=False)
class TesHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or counts.ndim != 1 or edges.size != counts.size + 1:
            raise ValueError("need len(bin_edges) == len(counts) + 1")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_events(cls, events, bins):
        counts, edges = np.histogram(np.asarray(events, dtype=np.float64), bins=bins)
        return cls(edges, counts)

    @classmethod
    def from_centers(cls, centers, counts):
        """Histogram from bin centres; edges sit at midpoints, outer bins symmetric."""
        c = np.asarray(centers, dtype=np.float64)
        if c.size < 2:
            raise ValueError("need at least two bins")
        mid = 0.5 * (c[1:] + c[:-1])
        edges = np.concatenate([[c[0] - (mid[0] - c[0])], mid, [c[-1] + (c[-1] - mid[-1])]])
        return cls(edges, counts)

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])


@dataclass(frozen=True, eq=False)
class MixtureFit:
    """Gaussian response per photon number with acceptance windows.

    ``weights``, ``centers`` and ``widths`` are indexed by photon number.
    ``windows[j] = (low, high)``; a value on a shared border belongs to the
    lower window.
    """

    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    windows: np.ndarray
    misassign_in: np.ndarray
    misassign_out: np.ndarray
    residual: float = float("nan")

    @classmethod
    def from_components(cls, weights, centers, widths, windows=None, residual=float("nan")):
        weights = np.asarray(weights, dtype=np.float64)
        centers = np.asarray(centers, dtype=np.float64)
        widths = np.asarray(widths, dtype=np.float64)
        if windows is None:
            windows = midpoint_windows(centers, -np.inf, np.inf)
        windows = np.asarray(windows, dtype=np.float64)
        m_in, m_out = _misassignment(weights, centers, widths, windows)
        return cls(weights, centers, widths, windows, m_in, m_out, residual)

    @property
    def components(self):
        return list(zip(self.weights, self.centers, self.widths))

    def to_dict(self):
        return {
            "components": [
                {"n": j, "weight": float(w), "center": float(c), "width": float(s)}
                for j, (w, c, s) in enumerate(self.components)
            ],
            "acceptance_windows": [[float(lo), float(hi)] for lo, hi in self.windows],
            "misassign_in": [float(x) for x in self.misassign_in],
            "misassign_out": [float(x) for x in self.misassign_out],
            "residual": float(self.residual),
        }

    @classmethod
    def from_dict(cls, d):
        comps = d["components"]
        return cls.from_components(
            [c["weight"] for c in comps], [c["center"] for c in comps], [c["width"] for c in comps],
            d["acceptance_windows"], d.get("residual", float("nan")),
        )


def midpoint_windows(centers, low, high):
    centers = np.asarray(centers, dtype=np.float64)
    cuts = 0.5 * (centers[1:] + centers[:-1])
    bounds = np.concatenate([[low], cuts, [high]])
    return np.column_stack([bounds[:-1], bounds[1:]])


def _window_mass(centers, widths, windows):
    """``P[i, j]``: probability that component ``i`` lands in window ``j``."""
    z_hi = (windows[None, :, 1] - centers[:, None]) / widths[:, None]
    z_lo = (windows[None, :, 0] - centers[:, None]) / widths[:, None]
    return ndtr(z_hi) - ndtr(z_lo)


def _misassignment(weights, centers, widths, windows):
    P = _window_mass(centers, widths, windows)
    own = np.diag(P)
    out = np.clip(1.0 - own, 0.0, 1.0)
    clicks = weights @ P
    foreign = clicks - weights * own
    with np.errstate(invalid="ignore", divide="ignore"):
        inside = np.where(clicks > 0, foreign / clicks, 0.0)
    return np.clip(inside, 0.0, 1.0), out


def misassignment_probabilities(fit):
    """``(misassign_in, misassign_out)`` per photon number.

    ``misassign_out[j]``: a true ``j`` event falls outside window ``j``.
    ``misassign_in[j]``: a click inside window ``j`` came from another number.
    """
    return _misassignment(fit.weights, fit.centers, fit.widths, fit.windows)


def _mixture_counts(params, edges, n_peaks):
    amps = params[:n_peaks]
    centers = params[n_peaks:2 * n_peaks]
    widths = params[2 * n_peaks:]
    cdf = ndtr((edges[None, :] - centers[:, None]) / widths[:, None])
    return amps @ np.diff(cdf, axis=1)


def _initial_guess(hist, n_peaks, prominence):
    counts = hist.counts.astype(np.float64)
    x = hist.centers
    width = hist.bin_edges[-1] - hist.bin_edges[0]
    peaks, props = find_peaks(counts, prominence=prominence * counts.max())
    if peaks.size >= n_peaks:
        keep = np.sort(peaks[np.argsort(props["prominences"])[::-1][:n_peaks]])
        centers = x[keep]
    else:
        # too few resolved maxima: split the occupied range evenly
        occ = x[counts > 0]
        centers = np.linspace(occ.min(), occ.max(), n_peaks + 2)[1:-1] if n_peaks > 1 else [occ.mean()]
        centers = np.asarray(centers, dtype=np.float64)
    if n_peaks > 1:
        sep = np.min(np.diff(centers))
    else:
        sep = width
    total = counts.sum()
    sigma0 = np.full(n_peaks, max(sep / 4.0, np.diff(hist.bin_edges).max()))
    if n_peaks == 1:
        sigma0[:] = max(np.sqrt(np.average((x - centers[0]) ** 2, weights=counts)), np.diff(hist.bin_edges).max())
    amps = np.full(n_peaks, total / n_peaks)
    return np.concatenate([amps, centers, sigma0])


def fit_mixture(hist, n_peaks, *, prominence=0.01):
    """Weighted least-squares fit of ``n_peaks`` Gaussian responses to a histogram.

    Bin counts are modelled as integrals of the mixture over each bin, weighted
    by Poisson standard deviations. Peak detection seeds the centres.

    Raises:
        MixtureFitError: non-convergence, or a width collapsed below the bin width.
    """
    n_peaks = int(n_peaks)
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    counts = hist.counts.astype(np.float64)
    if np.count_nonzero(counts) < 3 * n_peaks:
        raise ValueError(f"need at least {3 * n_peaks} occupied bins for {n_peaks} peaks")
    edges = hist.bin_edges
    sigma = np.sqrt(np.maximum(counts, 1.0))
    x0 = _initial_guess(hist, n_peaks, prominence)
    lo = np.concatenate([np.zeros(n_peaks), np.full(n_peaks, edges[0]), np.full(n_peaks, 1e-9)])
    hi = np.concatenate([np.full(n_peaks, np.inf), np.full(n_peaks, edges[-1]),
                         np.full(n_peaks, edges[-1] - edges[0])])
    x0 = np.clip(x0, lo, hi)
    res = least_squares(
        lambda p: (_mixture_counts(p, edges, n_peaks) - counts) / sigma,
        x0, bounds=(lo, hi), x_scale="jac", method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12,
        max_nfev=200 * (3 * n_peaks + 1),
    )
    diag = {"status": int(res.status), "message": res.message, "nfev": int(res.nfev), "cost": float(res.cost)}
    if res.status <= 0:
        raise MixtureFitError(f"mixture fit did not converge: {res.message}", diag)
    amps, centers, widths = np.split(res.x, 3)
    order = np.argsort(centers)
    amps, centers, widths = amps[order], centers[order], widths[order]
    bin_w = float(np.min(np.diff(edges)))
    if np.any(widths < bin_w):
        raise MixtureFitError(f"component width collapsed below bin width {bin_w:g}", diag)
    if n_peaks > 1 and np.any(np.diff(centers) <= 0):
        raise MixtureFitError("component centres coincide", diag)
    weights = amps / amps.sum()
    windows = midpoint_windows(centers, edges[0], edges[-1])
    return MixtureFit.from_components(weights, centers, widths, windows, residual=2.0 * res.cost)


@dataclass(frozen=True, eq=False)
class CountRecord:
    """Counts per photon number with asymmetric rate intervals.

    ``rate_low <= rate <= rate_high`` combine a Bernoulli confidence interval
    with the misassignment bounds in quadrature.
    """

    counts: np.ndarray
    rates: np.ndarray
    rate_low: np.ndarray
    rate_high: np.ndarray
    overflow: int
    total: int

    def to_dict(self):
        return {
            "total": int(self.total),
            "overflow": int(self.overflow),
            "photon_numbers": [
                {"n": j, "count": int(c), "rate": float(r), "rate_low": float(lo), "rate_high": float(hi)}
                for j, (c, r, lo, hi) in enumerate(zip(self.counts, self.rates, self.rate_low, self.rate_high))
            ],
        }


def _bernoulli_interval(k, n, confidence):
    if n < BERNOULLI_EXACT_BELOW:
        ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="exact")
        return ci.low, ci.high
    p = k / n
    half = norm.ppf(0.5 + confidence / 2) * np.sqrt(p * (1 - p) / n)
    return max(p - half, 0.0), min(p + half, 1.0)


def assign_counts(events, fit, *, confidence=0.95):
    """Bin pulse areas into photon numbers by acceptance window.

    Events outside every window go to the overflow bucket; they count towards
    the total used for rates.
    """
    events = np.asarray(events, dtype=np.float64).ravel()
    n_win = fit.windows.shape[0]
    total = events.size
    if total == 0:
        z = np.zeros(n_win)
        return CountRecord(z.astype(np.int64), z, z.copy(), z.copy(), 0, 0)
    cuts = fit.windows[1:, 0]
    idx = np.searchsorted(cuts, events, side="left")
    inside = (events >= fit.windows[0, 0]) & (events <= fit.windows[-1, 1])
    counts = np.bincount(idx[inside], minlength=n_win).astype(np.int64)
    overflow = int(total - counts.sum())
    rates = counts / total
    m_in, m_out = fit.misassign_in, fit.misassign_out
    low = np.empty(n_win)
    high = np.empty(n_win)
    for j in range(n_win):
        s_lo, s_hi = _bernoulli_interval(counts[j], total, confidence)
        sys_lo = rates[j] * m_in[j]
        sys_hi = rates[j] * m_out[j] / (1.0 - m_out[j]) if m_out[j] < 1 else np.inf
        low[j] = rates[j] - np.hypot(rates[j] - s_lo, sys_lo)
        high[j] = rates[j] + np.hypot(s_hi - rates[j], sys_hi)
    return CountRecord(counts, rates, np.maximum(low, 0.0), np.minimum(high, 1.0), overflow, total)


def allan_variance(series, block_sizes):
    """Non-overlapping two-sample Allan variance for each block size."""
    x = np.asarray(series, dtype=np.float64).ravel()
    out = []
    for m in block_sizes:
        m = int(m)
        if m < 1:
            raise ValueError("block sizes must be >= 1")
        n_blocks = x.size // m
        if n_blocks < 2:
            raise ValueError(f"series of length {x.size} too short for block size {m}")
        means = x[: n_blocks * m].reshape(n_blocks, m).mean(axis=1)
        out.append(0.5 * float(np.mean(np.diff(means) ** 2)))
    return np.array(out)
