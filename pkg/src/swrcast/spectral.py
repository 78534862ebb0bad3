"""Dominant-period detection and training-window sizing.

The normalized Lomb-Scargle periodogram locates the dominant cycle of a load
series; the training window is then a configurable multiple of that period,
falling back to one day of samples when no peak is significant. A direct
O(N*Nf) evaluation is the reference; an FFT/extirpolation variant gives the
same powers to high accuracy for large inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import LoadSeries

_CHUNK = 256


class ConstantSeriesError(ValueError):
    """Zero-variance input: no periodicity can be estimated."""


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniformly spaced analysis frequencies in Hz."""

    frequencies: np.ndarray
    oversampling: float
    f_max: float

    def __post_init__(self):
        freqs = np.array(self.frequencies, dtype=np.float64)
        freqs.setflags(write=False)
        object.__setattr__(self, "frequencies", freqs)
        if freqs.size < 1:
            raise ValueError("frequency grid is empty")
        if freqs[0] <= 0 or np.any(np.diff(freqs) <= 0):
            raise ValueError("frequencies must be positive and strictly ascending")

    def __len__(self) -> int:
        return int(self.frequencies.size)


@dataclass(frozen=True)
class Periodogram:
    """Normalized Lomb-Scargle power on a frequency grid.

    ``n_independent`` is the effective number of independent frequencies used
    by the peak-significance test (grid size divided by the oversampling).
    """

    grid: FrequencyGrid
    power: np.ndarray
    n_samples: int
    n_independent: int

    def __post_init__(self):
        power = np.array(self.power, dtype=np.float64)
        power.setflags(write=False)
        object.__setattr__(self, "power", power)
        if power.size != len(self.grid):
            raise ValueError("power length must match the frequency grid")
        if not np.all(np.isfinite(power)) or np.any(power < 0):
            raise ValueError("power values must be finite and non-negative")


@dataclass(frozen=True)
class SizingConfig:
    """Knobs for :func:`training_window_size`.

    ``multiplier`` scales the dominant period into a window length;
    ``fallback_samples`` is used when no peak beats ``alpha``. ``max_window``
    of None leaves the upper bound open (callers that must bound the window,
    like the forecasting engine, pass an explicit cap).
    """

    oversampling: float = 4.0
    alpha: float = 0.01
    multiplier: float = 1.0
    fallback_samples: int = 288
    min_window: int = 64
    max_window: int | None = None
    history_cap: int | None = None
    refine_peak: bool = True

    def __post_init__(self):
        if self.oversampling < 1:
            raise ValueError("oversampling must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")
        if self.min_window < 2:
            raise ValueError("min_window must be >= 2")
        if self.max_window is not None and self.max_window < self.min_window:
            raise ValueError("max_window must be >= min_window")
        if self.history_cap is not None and self.history_cap < 3:
            raise ValueError("history_cap must be >= 3")


@dataclass(frozen=True)
class WindowSizing:
    """Outcome of the training-window sizing stage."""

    dominant_period_seconds: float | None
    window_samples: int
    significant: bool
    false_alarm_prob: float


def build_freq_grid(series: LoadSeries, oversampling: float = 4.0) -> FrequencyGrid:
    """Grid from ``1/(oversampling*T_span)`` up to the pseudo-Nyquist
    ``1/(2*step)`` in steps of the lowest frequency."""
    return _freq_grid(len(series), series.step, oversampling)


def _freq_grid(n: int, step: float, oversampling: float) -> FrequencyGrid:
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    if n < 2:
        raise ValueError("need at least 2 samples to span a frequency grid")
    t_span = (n - 1) * step
    df = 1.0 / (oversampling * t_span)
    count = int(math.floor(oversampling * (n - 1) / 2.0 + 1e-9))
    if count < 1:
        raise ValueError("degenerate grid: pseudo-Nyquist below the lowest frequency")
    freqs = np.arange(1, count + 1, dtype=np.float64) * df
    return FrequencyGrid(freqs, float(oversampling), 1.0 / (2.0 * step))


def _validate_input(times, values) -> tuple[np.ndarray, np.ndarray, float]:
    t = np.asarray(times, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.ndim != 1 or t.shape != y.shape:
        raise ValueError("times and values must be 1-d arrays of equal length")
    if t.size < 3:
        raise ValueError("need at least 3 samples for a periodogram")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    var = float(np.var(y, ddof=1))
    if var <= 0.0:
        raise ConstantSeriesError("constant input: no periodicity")
    return t, y, var


def _lomb_power(t, y, var, freqs) -> np.ndarray:
    """Normalized Lomb power at ``freqs`` for mean-centered evaluation.

    Times are referenced to their mean so the phase offset tau stays small;
    the power itself is invariant to any constant time shift.
    """
    tm = t - t.mean()
    ym = y - y.mean()
    n_f = freqs.size
    power = np.empty(n_f)
    for lo in range(0, n_f, _CHUNK):
        w = 2.0 * np.pi * freqs[lo : lo + _CHUNK, None]
        wt = w * tm[None, :]
        s2 = np.sin(2.0 * wt).sum(axis=1)
        c2 = np.cos(2.0 * wt).sum(axis=1)
        wtau = 0.5 * np.arctan2(s2, c2)
        arg = wt - wtau[:, None]
        ca = np.cos(arg)
        sa = np.sin(arg)
        yc = ca @ ym
        ys = sa @ ym
        cc = np.einsum("ij,ij->i", ca, ca)
        ss = np.einsum("ij,ij->i", sa, sa)
        # The ratios are Cauchy-Schwarz bounded; only an exactly zero
        # denominator (degenerate phase at the pseudo-Nyquist) needs a guard.
        cterm = np.where(cc > 0.0, yc * yc / np.where(cc > 0.0, cc, 1.0), 0.0)
        sterm = np.where(ss > 0.0, ys * ys / np.where(ss > 0.0, ss, 1.0), 0.0)
        power[lo : lo + _CHUNK] = (cterm + sterm) / (2.0 * var)
    return np.maximum(power, 0.0)


def lomb_scargle_direct(times, values, grid: FrequencyGrid) -> Periodogram:
    """Reference evaluation of the normalized Lomb-Scargle periodogram.

    For each frequency the phase offset tau solves
    ``tan(2*w*tau) = sum sin(2*w*(t-tbar)) / sum cos(2*w*(t-tbar))`` and the
    power is the tau-shifted projection onto cos/sin, normalized by twice the
    sample variance. Raises :class:`ConstantSeriesError` on zero variance.
    """
    t, y, var = _validate_input(times, values)
    power = _lomb_power(t, y, var, grid.frequencies)
    n_ind = max(1, int(round(len(grid) / grid.oversampling)))
    return Periodogram(grid, power, t.size, n_ind)


def _extirpolate(value: float, mesh: np.ndarray, x: float, order: int) -> None:
    """Spread ``value`` onto ``order`` mesh points around fractional index ``x``
    with Lagrange interpolation weights, so that later harmonic sums over the
    mesh reproduce sums over the true sample positions."""
    ndim = mesh.shape[0]
    ix = int(x)
    if x == ix:
        mesh[ix] += value
        return
    ilo = min(max(int(x - 0.5 * order + 1.0), 0), ndim - order)
    ihi = ilo + order - 1
    fac = x - ilo
    for j in range(ilo + 1, ihi + 1):
        fac *= x - j
    nden = math.factorial(order - 1)
    mesh[ihi] += value * fac / (nden * (x - ihi))
    for j in range(ihi - 1, ilo - 1, -1):
        nden = (nden // (j + 1 - ilo)) * (j - ihi)
        mesh[j] += value * fac / (nden * (x - j))


def lomb_scargle_fast(
    times, values, grid: FrequencyGrid, interp_order: int = 12
) -> Periodogram:
    """FFT-accelerated periodogram, agreeing with the direct form to ~1e-9.

    Samples are extirpolated onto an oversized regular mesh and all trig sums
    are read off two FFTs, as in the classic fast spectral-analysis scheme.
    Requires the uniform grid produced by :func:`build_freq_grid` (integer
    multiples of its lowest frequency). Bins whose phase geometry is
    degenerate (the exact pseudo-Nyquist under uniform sampling) are
    recomputed with the direct formula, keeping agreement tight everywhere.
    """
    t, y, var = _validate_input(times, values)
    freqs = grid.frequencies
    df = float(freqs[0])
    ks = freqs / df
    k_round = np.round(ks)
    if np.max(np.abs(ks - k_round)) > 1e-6 or k_round[0] != 1 or np.any(
        np.diff(k_round) != 1
    ):
        raise ValueError(
            "fast evaluation requires the contiguous uniform grid from build_freq_grid"
        )
    count = freqs.size
    if interp_order < 2:
        raise ValueError("interp_order must be >= 2")

    n = t.size
    # Mesh sized so bin k of the FFT lands exactly on frequency k*df.
    target = 2 * count * interp_order
    nfreq = 64
    while nfreq < target:
        nfreq *= 2
    ndim = 2 * nfreq

    # A sample at time t maps to mesh position (t - t0) * ndim * df; bin k of
    # the FFT then evaluates sums of exp(2*pi*i*k*df*(t - t0)).
    pos = (t - t[0]) * (ndim * df)
    pos %= ndim
    pos2 = (2.0 * pos) % ndim

    ym = y - y.mean()
    wk1 = np.zeros(ndim)
    wk2 = np.zeros(ndim)
    for j in range(n):
        _extirpolate(ym[j], wk1, pos[j], interp_order)
        _extirpolate(1.0, wk2, pos2[j], interp_order)

    f1 = np.fft.rfft(wk1)
    f2 = np.fft.rfft(wk2)
    # Positive-exponent convention: imag parts carry +sum(sin ...).
    r1 = f1.real[1 : count + 1]
    i1 = -f1.imag[1 : count + 1]
    r2 = f2.real[1 : count + 1]
    i2 = -f2.imag[1 : count + 1]

    hypo = np.hypot(r2, i2)
    hypo = np.maximum(hypo, 1e-30)
    hc2wt = 0.5 * r2 / hypo
    hs2wt = 0.5 * i2 / hypo
    cwt = np.sqrt(np.maximum(0.5 + hc2wt, 0.0))
    swt = np.sqrt(np.maximum(0.5 - hc2wt, 0.0)) * np.where(hs2wt >= 0, 1.0, -1.0)
    den = 0.5 * n + hc2wt * r2 + hs2wt * i2
    den_s = n - den
    safe_den = np.maximum(den, 1e-30)
    safe_den_s = np.maximum(den_s, 1e-30)
    cterm = (cwt * r1 + swt * i1) ** 2 / safe_den
    sterm = (cwt * i1 - swt * r1) ** 2 / safe_den_s
    power = (cterm + sterm) / (2.0 * var)

    # Extirpolation noise cannot be trusted where a projection basis nearly
    # vanishes; recompute those bins exactly.
    bad = np.minimum(den, den_s) < 1e-3 * n
    if np.any(bad):
        power[bad] = _lomb_power(t, y, var, freqs[bad])

    power = np.maximum(power, 0.0)
    n_ind = max(1, int(round(count / grid.oversampling)))
    return Periodogram(grid, power, n, n_ind)


def false_alarm_probability(peak_power: float, n_independent: int) -> float:
    """Chance that pure noise produces a normalized peak this high:
    ``1 - (1 - exp(-z))**M`` for ``M`` independent frequencies."""
    if peak_power < 0:
        raise ValueError("peak power must be non-negative")
    if n_independent < 1:
        raise ValueError("n_independent must be >= 1")
    if peak_power == 0.0:
        return 1.0
    inner = -math.expm1(-peak_power)  # 1 - e^{-z}, accurate for small z
    return max(float(-math.expm1(n_independent * math.log(inner))), 0.0)


def _refine_peak(freqs: np.ndarray, power: np.ndarray, ipk: int) -> float:
    """Parabolic interpolation of the peak frequency through its neighbors."""
    if ipk <= 0 or ipk >= freqs.size - 1:
        return float(freqs[ipk])
    pm, p0, pp = power[ipk - 1], power[ipk], power[ipk + 1]
    denom = pm - 2.0 * p0 + pp
    if denom >= 0.0:  # not a strict local maximum; keep the grid value
        return float(freqs[ipk])
    delta = 0.5 * (pm - pp) / denom
    delta = min(max(delta, -0.5), 0.5)
    df = freqs[1] - freqs[0]
    return float(freqs[ipk] + delta * df)


def training_window_size(
    series: LoadSeries, cfg: SizingConfig = SizingConfig()
) -> WindowSizing:
    """Choose the training-window length from the series' dominant period.

    Computes the periodogram over the available history (or the trailing
    ``history_cap`` samples), takes the global peak, and, when its false-alarm
    probability beats ``alpha``, sizes the window as
    ``round(multiplier * period / step)`` clamped to the configured bounds.
    Otherwise returns the fallback window with ``significant=False``.
    """
    vals = series.values
    if cfg.history_cap is not None and cfg.history_cap < vals.size:
        vals = vals[-cfg.history_cap :]
    if vals.size < 3:
        raise ValueError("need at least 3 samples to size a training window")

    def _clamp(w: int) -> int:
        w = max(w, cfg.min_window)
        if cfg.max_window is not None:
            w = min(w, cfg.max_window)
        return w

    times = np.arange(vals.size, dtype=np.float64) * series.step
    try:
        grid = _freq_grid(vals.size, series.step, cfg.oversampling)
        pgram = lomb_scargle_direct(times, vals, grid)
    except ConstantSeriesError:
        return WindowSizing(None, _clamp(cfg.fallback_samples), False, 1.0)

    ipk = int(np.argmax(pgram.power))
    fap = false_alarm_probability(float(pgram.power[ipk]), pgram.n_independent)
    if fap < cfg.alpha:
        f_pk = (
            _refine_peak(grid.frequencies, pgram.power, ipk)
            if cfg.refine_peak
            else float(grid.frequencies[ipk])
        )
        period = 1.0 / f_pk
        window = _clamp(int(round(cfg.multiplier * period / series.step)))
        return WindowSizing(period, window, True, fap)
    return WindowSizing(None, _clamp(cfg.fallback_samples), False, fap)


def sizing_with_bounds(cfg: SizingConfig, max_window: int) -> SizingConfig:
    """Copy of ``cfg`` with its window cap tightened to ``max_window``."""
    cap = max_window if cfg.max_window is None else min(cfg.max_window, max_window)
    return replace(cfg, max_window=cap)
