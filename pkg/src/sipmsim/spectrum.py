"""Pulse-height spectra: peaks, chain gain, calibration and visibility."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit
from scipy.signal import find_peaks as _scipy_find_peaks

from .errors import DegenerateSpectrum

BINS_PER_GAMMA = 25
COARSE_BINS = 512
NOISE_Z = 3.0
# gamma statistics use peaks located to within this fraction of gamma
POSITION_TOL = 0.006


@dataclass
class PulseHeightSpectrum:
    bin_edges: np.ndarray
    counts: np.ndarray
    peaks: list[tuple[float, float]] = field(default_factory=list)
    valleys: list[tuple[float, float]] = field(default_factory=list)
    peak_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    valley_bins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    position_errors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_series: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_bar: float = float("nan")
    visibility: float = float("nan")
    visibility_err: float = float("nan")

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0])

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def n_shots(self) -> int:
        return int(self.counts.sum())

    @property
    def peak_positions(self) -> np.ndarray:
        return np.array([p for p, _ in self.peaks])

    def metadata(self) -> dict:
        return {
            "peaks": [list(map(float, p)) for p in self.peaks],
            "valleys": [list(map(float, v)) for v in self.valleys],
            "gamma_series": [float(g) for g in self.gamma_series],
            "gamma_bar": _num(self.gamma_bar),
            "visibility": _num(self.visibility),
            "visibility_err": _num(self.visibility_err),
            "n_peaks": len(self.peaks),
            "n_shots": self.n_shots,
        }


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def build_phs(x_values, bin_width: float) -> PulseHeightSpectrum:
    """Uniform histogram starting at ``min(x)`` and covering ``max(x)``."""
    x = np.asarray(x_values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot build a spectrum from no data")
    if not bin_width > 0:
        raise ValueError(f"bin_width must be > 0, got {bin_width}")
    lo, hi = x.min(), x.max()
    n_bins = int(np.floor((hi - lo) / bin_width)) + 1
    edges = lo + bin_width * np.arange(n_bins + 1)
    idx = np.minimum(((x - lo) / bin_width).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return PulseHeightSpectrum(edges, counts)


def smooth(counts) -> np.ndarray:
    """Three-bin moving average (zero padded)."""
    return np.convolve(np.asarray(counts, dtype=float), np.ones(3) / 3, mode="same")


def find_peaks(phs: PulseHeightSpectrum, min_prominence: float = 0.01, min_distance: int | None = None,
               noise_z: float = NOISE_Z, fit_halfwidth: int | None = None):
    """Locate photon peaks and the valleys between them.

    Peaks are local maxima of the smoothed histogram whose prominence is at
    least ``min_prominence`` times its maximum and at least ``noise_z``
    counting-noise standard deviations of the peak-minus-base difference.
    Positions are refined with a three-point parabola, or, given
    ``fit_halfwidth``, with a Gaussian-plus-constant fit to the raw counts
    over that many bins either side. Heights and valley depths are smoothed
    counts. Fills ``phs.peaks``/``phs.valleys`` in place
    and returns them.
    """
    s = smooth(phs.counts)
    padded = np.r_[0.0, s, 0.0]
    kw = {"prominence": min_prominence * s.max()}
    if min_distance:
        kw["distance"] = max(1, int(min_distance))
    idx, props = _scipy_find_peaks(padded, **kw)
    if noise_z > 0 and idx.size:
        base = padded[idx] - props["prominences"]
        # smoothed bins average 3 Poisson counts
        sigma = np.sqrt((padded[idx] + base) / 3.0)
        idx = idx[props["prominences"] >= noise_z * sigma]
    idx = idx - 1
    if idx.size < 2:
        raise DegenerateSpectrum(f"found {idx.size} peak(s); need at least 2")

    centers, w = phs.bin_centers, phs.bin_width
    positions, errors = [], []
    counts = np.asarray(phs.counts, dtype=float)
    for i in idx:
        if fit_halfwidth:
            fit = _gauss_position(centers, counts, i, fit_halfwidth)
            if fit is not None:
                positions.append(fit[0])
                errors.append(fit[1])
                continue
        off = 0.0
        if 0 < i < s.size - 1:
            den = s[i - 1] - 2 * s[i] + s[i + 1]
            if den < 0:
                off = float(np.clip(0.5 * (s[i - 1] - s[i + 1]) / den, -0.5, 0.5))
        positions.append(centers[i] + off * w)
        errors.append(np.nan)
    valleys = np.array([a + np.argmin(s[a:b + 1]) for a, b in zip(idx[:-1], idx[1:])], dtype=int)

    phs.peak_bins = idx
    phs.valley_bins = valleys
    phs.position_errors = np.asarray(errors, dtype=float)
    phs.peaks = [(float(p), float(s[i])) for p, i in zip(positions, idx)]
    phs.valleys = [(float(centers[j]), float(s[j])) for j in valleys]
    return phs.peaks, phs.valleys


def _gauss(t, a, mu, sigma, b):
    return a * np.exp(-0.5 * ((t - mu) / sigma) ** 2) + b


def _gauss_position(centers, counts, i, halfwidth):
    a, b = max(0, i - halfwidth), min(counts.size, i + halfwidth + 1)
    t, n = centers[a:b], counts[a:b]
    if n.size < 5 or n.sum() <= 0:
        return None
    w = centers[1] - centers[0]
    p0 = [max(n.max() - n.min(), 1.0), centers[i], halfwidth * w / 2, n.min()]
    try:
        # a singular covariance shows up as an infinite error below
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(_gauss, t, n, p0=p0, sigma=np.sqrt(n + 1.0), maxfev=2000)
    except (RuntimeError, ValueError):
        return None
    mu = float(popt[1])
    # a fit that wanders off its window is not trusted
    if not (popt[0] > 0 and abs(mu - centers[i]) <= halfwidth * w / 2):
        return None
    return mu, float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else np.inf


def truncate_comb(phs: PulseHeightSpectrum, low: float = 0.6, high: float = 1.5) -> int:
    """Keep the leading run of evenly spaced peaks, dropping sparse-tail noise.

    A peak is kept while its distance to the previous one lies within
    ``[low, high]`` times the median of the distances kept so far, so a
    gradual gain compression survives but isolated tail bumps do not.
    Returns the number of peaks kept.
    """
    pos = phs.peak_positions
    keep = min(2, pos.size)
    for i in range(2, pos.size):
        ref = np.median(np.diff(pos[:keep]))
        gap = pos[i] - pos[i - 1]
        if not low * ref <= gap <= high * ref:
            break
        keep = i + 1
    phs.peaks = phs.peaks[:keep]
    phs.valleys = phs.valleys[:keep - 1]
    phs.peak_bins = phs.peak_bins[:keep]
    phs.valley_bins = phs.valley_bins[:keep - 1]
    phs.position_errors = phs.position_errors[:keep]
    return keep


def well_measured(phs: PulseHeightSpectrum, gamma: float, tol: float | None = None) -> int:
    """Length of the leading run of peaks whose position error is below ``tol*gamma``.

    Peaks without an error estimate count as well measured. At least two
    peaks are always returned so that a gamma exists.
    """
    tol = POSITION_TOL if tol is None else tol
    err = phs.position_errors
    if err.size == 0:
        return len(phs.peaks)
    bad = np.flatnonzero(err > tol * gamma)
    return max(2, int(bad[0]) if bad.size else len(phs.peaks))


def estimate_gamma(peak_positions) -> tuple[np.ndarray, float]:
    """Consecutive peak distances and their mean."""
    p = np.asarray(peak_positions, dtype=float)
    if p.size < 2:
        raise DegenerateSpectrum("gamma needs at least 2 peaks")
    series = np.diff(p)
    return series, float(series.mean())


def visibility_from_heights(peak_heights, valley_heights) -> float:
    """Mean of ``(M_i - m_i)/(M_i + m_i)`` over peaks with a following valley."""
    M = np.asarray(peak_heights, dtype=float)
    m = np.asarray(valley_heights, dtype=float)
    n = min(M.size, m.size)
    M, m = M[:n], m[:n]
    ok = (M + m) > 0
    if not ok.any():
        raise DegenerateSpectrum("visibility undefined: no usable peak/valley pair")
    return float(np.mean((M[ok] - m[ok]) / (M[ok] + m[ok])))


def visibility(phs: PulseHeightSpectrum) -> float:
    if len(phs.peaks) < 2:
        raise DegenerateSpectrum("visibility undefined for fewer than 2 peaks")
    return visibility_from_heights([h for _, h in phs.peaks], [h for _, h in phs.valleys])


def bootstrap_visibility(phs: PulseHeightSpectrum, rng: np.random.Generator, n_resamples: int = 200) -> float:
    """Standard deviation of the visibility over shot resamples.

    Resampling shots with replacement is the same as a multinomial draw of
    the bin counts; peak and valley bins are held at their fitted places.
    """
    n = phs.n_shots
    draws = rng.multinomial(n, phs.counts / n, size=n_resamples)
    vals = []
    for c in draws:
        s = smooth(c)
        vals.append(visibility_from_heights(s[phs.peak_bins], s[phs.valley_bins]))
    return float(np.std(vals, ddof=1))


def zero_position(peak_positions, gamma_bar: float) -> float:
    """Position of the 0-photon peak, extrapolated when it is not in the spectrum."""
    first = float(np.asarray(peak_positions)[0])
    offset = int(np.floor(first / gamma_bar + 0.5))
    return first - gamma_bar * max(offset, 0)


def calibrate(x_values, gamma_bar: float, zero_position: float, rounding: bool = False):
    """Convert outputs to detected photons ``(x - zero)/gamma``, optionally rounded."""
    if not gamma_bar > 0:
        raise ValueError(f"gamma_bar must be > 0, got {gamma_bar}")
    k = (np.asarray(x_values, dtype=float) - zero_position) / gamma_bar
    if rounding:
        k = np.maximum(np.floor(k + 0.5), 0.0)
    return k


def linearity_check(gamma_series, tolerance: float = 0.10):
    """1-based index of the first gamma falling below ``(1-tol)`` x median of the earlier ones."""
    g = np.asarray(gamma_series, dtype=float)
    if g.size < 3:
        raise ValueError("linearity check needs at least 3 gamma values")
    for i in range(1, g.size):
        if g[i] < (1 - tolerance) * np.median(g[:i]):
            return i + 1
    return None


def analyze_spectrum(x_values, bin_width: float | None = None, min_prominence: float = 0.01,
                     rng: np.random.Generator | None = None, n_bootstrap: int = 200) -> PulseHeightSpectrum:
    """Histogram, peaks, gamma and visibility (with bootstrap error) in one pass.

    Without ``bin_width`` a coarse histogram gives a first gamma estimate and
    the data are rebinned at ``gamma/25``; peaks closer than half a gamma
    are then merged away. Only the leading evenly spaced run of peaks is
    analysed (see :func:`truncate_comb`), and gamma comes from its leading
    peaks whose positions are known to ``POSITION_TOL`` (see
    :func:`well_measured`).
    """
    x = np.asarray(x_values, dtype=float).ravel()
    min_distance = None
    if bin_width is None:
        span = x.max() - x.min() if x.size else 0.0
        if span == 0:
            raise DegenerateSpectrum("all outputs are identical")
        coarse = build_phs(x, span / COARSE_BINS)
        find_peaks(coarse, min_prominence)
        truncate_comb(coarse)
        _, g0 = estimate_gamma(coarse.peak_positions)
        bin_width = g0 / BINS_PER_GAMMA
        min_distance = BINS_PER_GAMMA // 2
    phs = build_phs(x, bin_width)
    halfwidth = int(round(0.4 * BINS_PER_GAMMA)) if min_distance else None
    find_peaks(phs, min_prominence, min_distance, fit_halfwidth=halfwidth)
    truncate_comb(phs)
    _, g1 = estimate_gamma(phs.peak_positions)
    n_gamma = well_measured(phs, g1)
    phs.gamma_series, phs.gamma_bar = estimate_gamma(phs.peak_positions[:n_gamma])
    phs.visibility = visibility(phs)
    if rng is not None and n_bootstrap > 1:
        phs.visibility_err = bootstrap_visibility(phs, rng, n_bootstrap)
    return phs



def spectrum_csv(phs: PulseHeightSpectrum, fh) -> None:
    fh.write("bin_center,count\n")
    for c, n in zip(phs.bin_centers, phs.counts):
        fh.write(f"{c:.9g},{int(n)}\n")
