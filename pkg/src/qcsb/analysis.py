"""Estimators for damping, oscillation frequency, dephasing slope and scaling laws."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.optimize import least_squares
from scipy.signal import find_peaks


class FitError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class InsufficientData(FitError):
    pass


@dataclass(frozen=True)
class DampedFit:
    amplitude: float
    kappa: float
    omega: float
    phase: float
    offset: float
    residual: float

    def as_dict(self) -> dict:
        return asdict(self)


def _check_uniform(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 3:
        raise InsufficientData("need at least 3 samples")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
        raise ValueError("series must be uniformly sampled in increasing time")
    return t, float(dt.mean())


def _refined_peaks(t, y, dt):
    """Local maxima with a parabola through each peak and its neighbours."""
    idx, _ = find_peaks(y)
    idx = idx[(idx > 0) & (idx < len(y) - 1)]
    times, vals = [], []
    for i in idx:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        times.append(t[i] + shift * dt)
        vals.append(y1 - 0.25 * (y0 - y2) * shift)
    return np.array(times), np.array(vals)


def _spectral_peak(y, dt):
    n = len(y)
    nfft = 1 << (8 * n - 1).bit_length()
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(n), nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    i = int(np.argmax(spec[1:])) + 1
    if 0 < i < len(spec) - 1:
        a, b, c = spec[i - 1], spec[i], spec[i + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    return 2 * math.pi * (freqs[i] + shift * (freqs[1] - freqs[0]))


def damped_cosine(t, amplitude, kappa, omega, phase, offset):
    return amplitude * np.exp(-kappa * t) * np.cos(omega * t + phase) + offset


def fit_damped_oscillation(t, y, max_nfev: int = 2000) -> DampedFit:
    """Least-squares fit of ``A exp(-kappa t) cos(omega t + phi) + offset``.

    Initial guesses come from the spectral peak (omega), a log-linear fit of
    the peak envelope (kappa) and the first peak (A, phi).  ``residual`` is
    the rms misfit divided by the rms of the centred data.
    """
    t, dt = _check_uniform(t)
    y = np.asarray(y, dtype=float)
    if y.shape != t.shape:
        raise ValueError("t and y must have the same length")
    pk_t, pk_y = _refined_peaks(t, y, dt)
    if len(pk_t) < 3:
        raise InsufficientData(f"only {len(pk_t)} resolvable peaks; need at least 3")

    omega0 = _spectral_peak(y, dt)
    offset0 = float(np.mean(y))
    env = pk_y - offset0
    keep = env > 0
    if keep.sum() >= 2:
        slope = np.polyfit(pk_t[keep], np.log(env[keep]), 1)[0]
        kappa0 = max(-slope, 0.0)
    else:
        kappa0 = 0.0
    amp0 = (pk_y[0] - offset0) * math.exp(kappa0 * pk_t[0])
    phase0 = -omega0 * pk_t[0]
    t0 = t[0]
    scale = max(float(np.std(y)), 1e-300)

    def resid(q):
        return (damped_cosine(t - t0, *q) - y) / scale

    start = np.array([amp0, kappa0, omega0, phase0 + omega0 * t0, offset0])
    sol = least_squares(
        resid, start, method="lm", x_scale="jac", max_nfev=max_nfev,
        xtol=1e-14, ftol=1e-14, gtol=1e-14,
    )
    amp, kappa, omega, phase, offset = sol.x
    if amp < 0:
        amp, phase = -amp, phase + math.pi
    phase = (phase - omega * t0 + math.pi) % (2 * math.pi) - math.pi
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    centred = float(np.std(y)) / scale
    best = DampedFit(float(amp), float(kappa), float(abs(omega)), float(phase), float(offset),
                     rms / centred if centred > 0 else rms)
    if sol.status <= 0:
        raise FitError(f"damped-oscillation fit did not converge: {sol.message}", best)
    return best


def initial_slope(t, y, window: float) -> float:
    """OLS slope of ``y`` over the first ``window`` time units."""
    if not window > 0:
        raise ValueError("window must be positive")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    sel = t <= t[0] + window * (1 + 1e-12)
    if sel.sum() < 10:
        raise InsufficientData(f"only {int(sel.sum())} samples inside the window; need 10")
    return float(np.polyfit(t[sel] - t[0], y[sel], 1)[0])


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float

    def as_dict(self) -> dict:
        return asdict(self)


def scaling_fit(xs, ys) -> LineFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 3:
        raise InsufficientData("scaling fit needs at least 3 (x, y) pairs")
    if np.ptp(xs) == 0:
        raise FitError("degenerate abscissa: all x values are equal")
    res = stats.linregress(xs, ys)
    return LineFit(float(res.slope), float(res.intercept), float(res.rvalue**2))


def oscillation_amplitude(t, y, t_max=None) -> float:
    """Half the mean peak-to-trough height of the peaks and troughs up to ``t_max``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t_max is not None:
        sel = t <= t_max
        t, y = t[sel], y[sel]
    dt = float(np.mean(np.diff(t)))
    _, hi = _refined_peaks(t, y, dt)
    _, lo = _refined_peaks(t, -y, dt)
    n = min(len(hi), len(lo))
    if n < 1:
        raise InsufficientData("no complete oscillation in range")
    return float(np.mean(hi[:n] + lo[:n]) / 2)
