import math

import numpy as np
import pytest

from qcsb import analysis
from qcsb.dynamics import BathSpectrum
from qcsb.experiments import run_trajectory, trajectory_fits
from qcsb.statespace import QcsbParams

T = np.arange(0, 120 + 1e-9, 0.05)


def test_synthetic_damped_cosine():
    fit = analysis.fit_damped_oscillation(T, np.exp(-0.1 * T) * np.cos(0.5 * T))
    assert fit.kappa == pytest.approx(0.1, abs=1e-3)
    assert fit.omega == pytest.approx(0.5, abs=1e-3)
    assert fit.amplitude == pytest.approx(1, abs=1e-3)
    assert fit.residual < 1e-6


def test_pure_cosine_has_no_damping():
    fit = analysis.fit_damped_oscillation(T, 0.3 * np.cos(0.8 * T + 0.4) + 2.0)
    assert abs(fit.kappa) < 1e-6
    assert fit.offset == pytest.approx(2.0, abs=1e-8)
    assert fit.phase == pytest.approx(0.4, abs=1e-6)


@pytest.mark.parametrize("c", [1e-3, 7.0])
def test_fit_is_scale_equivariant(c):
    y = np.exp(-0.05 * T) * np.cos(0.9 * T + 1.0)
    a = analysis.fit_damped_oscillation(T, y)
    b = analysis.fit_damped_oscillation(T, c * y)
    assert b.amplitude == pytest.approx(c * a.amplitude, rel=1e-7)
    assert b.kappa == pytest.approx(a.kappa, rel=1e-7)
    assert b.omega == pytest.approx(a.omega, rel=1e-7)


def test_fit_is_deterministic():
    y = np.exp(-0.02 * T) * np.sin(0.6 * T) + 1e-3 * np.cos(3.1 * T)
    assert analysis.fit_damped_oscillation(T, y) == analysis.fit_damped_oscillation(T, y)


def test_fit_errors():
    t = np.arange(0, 10, 0.05)
    with pytest.raises(analysis.InsufficientData):
        analysis.fit_damped_oscillation(t, np.cos(0.5 * t))
    with pytest.raises(ValueError):
        analysis.fit_damped_oscillation(np.r_[0, 0.1, 0.3, 0.4], np.zeros(4))


def test_initial_slope():
    t = np.arange(0, 5, 0.01)
    assert analysis.initial_slope(t, np.full_like(t, 3.0), 1.0) == pytest.approx(0, abs=1e-12)
    y = 0.01 * t + 1e-5 * t**2
    assert analysis.initial_slope(t, y, 1.0) == pytest.approx(0.01, abs=1e-4)
    assert analysis.initial_slope(t, y + 42.0, 1.0) == pytest.approx(analysis.initial_slope(t, y, 1.0), abs=1e-12)
    with pytest.raises(analysis.InsufficientData):
        analysis.initial_slope(t, y, 0.05)
    with pytest.raises(ValueError):
        analysis.initial_slope(t, y, 0.0)


def test_scaling_fit():
    xs = np.arange(2, 11)
    fit = analysis.scaling_fit(xs, 2 * xs)
    assert fit.slope == pytest.approx(2) and fit.r2 == pytest.approx(1)
    with pytest.raises(analysis.InsufficientData):
        analysis.scaling_fit([1, 2], [1, 2])
    with pytest.raises(analysis.FitError):
        analysis.scaling_fit([3, 3, 3], [1, 2, 3])


def test_oscillation_amplitude():
    t = np.arange(0, 50, 0.01)
    assert analysis.oscillation_amplitude(t, 0.7 * np.cos(2 * t) + 5) == pytest.approx(0.7, rel=1e-5)
    with pytest.raises(analysis.InsufficientData):
        analysis.oscillation_amplitude(t, t)


@pytest.mark.slow
def test_dephasing_decreases_with_spin_count():
    gamma = BathSpectrum(gamma_const=10.0)
    slopes = {}
    for N in (4, 8):
        p = QcsbParams(1.0, 0.0, 1.0, N, 100.0, 0.01)
        traj = run_trajectory(p, gamma, t_end=60.0)
        fits = trajectory_fits(traj, p)
        slopes[N] = fits["dephasing_slope"]
        w_eff = math.sqrt(1 / (1 + math.e))
        assert fits["x_oscillation"]["omega"] == pytest.approx(w_eff, rel=0.05)
    assert slopes[4] > slopes[8] > 0
