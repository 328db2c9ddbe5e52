"""Experiment pipelines behind the command-line front end."""

from __future__ import annotations

import logging
import math

import numpy as np

from . import analysis, config, thermo
from .dynamics import Trajectory, evolve, hamiltonian_blocks, rate_operators
from .statespace import (
    QcsbParams,
    block_state_init,
    build_oscillator_space,
    coherent_state,
    thermal_spin_weights,
)

log = logging.getLogger(__name__)

CONVERGENCE_RTOL = 1e-4


def prepare(params: QcsbParams, spectrum, alpha=1.0, fock_dim=30, ref_freq=None):
    """Basis, initial state (thermal spins x coherent oscillator), rates and Hamiltonians."""
    w_ref = ref_freq if ref_freq else thermo.default_ref_freq(params)
    space = build_oscillator_space(fock_dim, params.mass, w_ref)
    weights = thermal_spin_weights(params.spin_count, params.spin_gap, params.beta)
    state = block_state_init(space, weights, coherent_state(space, alpha))
    return state, rate_operators(space, params, spectrum), hamiltonian_blocks(space, params)


def run_trajectory(params, spectrum, alpha=1.0, fock_dim=30, ref_freq=None,
                   t_end=60.0, sample_dt=0.05, tol=1e-8) -> Trajectory:
    state, rates, hams = prepare(params, spectrum, alpha, fock_dim, ref_freq)
    return evolve(state, rates, hams, t_end, sample_dt, tol, params=params)


def _t_end(cfg, N):
    per = cfg["numerics"]["t_end_per_spin"]
    return float(per * N) if per else float(cfg["numerics"]["t_end"])


def trajectory_fits(traj: Trajectory, params: QcsbParams, slope_window=None,
                    rule: str = "fitted_period") -> dict:
    """Damped-oscillation fit of <x> and the initial impurity slope.

    Without an explicit ``slope_window`` the window is one fitted period
    (``rule="fitted_period"``, falling back to 2 pi / omega_eff when <x> has
    too few peaks to fit) or one omega_eff period (``rule="omega_eff_period"``).
    """
    traj = traj.uniform()
    fits = {}
    errors = []
    period = None
    try:
        fit = analysis.fit_damped_oscillation(traj.times, traj.x)
        fits["x_oscillation"] = fit.as_dict()
        if fit.omega > 0:
            period = 2 * math.pi / fit.omega
    except (analysis.FitError, ValueError) as exc:
        errors.append(f"x_oscillation: {exc}")
        fits["x_oscillation"] = None
    window_source = "config"
    if slope_window is None:
        if period is not None and rule == "fitted_period":
            slope_window, window_source = period, "fitted_period"
        else:
            w_eff = thermo.effective_frequency(params)
            slope_window = 2 * math.pi / w_eff if w_eff > 0 else traj.times[-1]
            window_source = "omega_eff_period"
    try:
        fits["dephasing_slope"] = analysis.initial_slope(traj.times, traj.impurity, slope_window)
    except (analysis.FitError, ValueError) as exc:
        errors.append(f"dephasing_slope: {exc}")
        fits["dephasing_slope"] = None
    fits["slope_window"] = slope_window
    fits["slope_window_source"] = window_source
    fits["errors"] = errors
    return fits


def _window(cfg):
    a = cfg["analysis"]
    return {"slope_window": a["slope_window"], "rule": a["slope_window_rule"]}


def convergence_check(cfg, params, spectrum, traj) -> dict:
    """Rerun at a larger cutoff and report the largest relative change of the observables."""
    n = cfg["numerics"]
    bigger = run_trajectory(
        params, spectrum, config.alpha(cfg), n["fock_dim"] + 10, n["ref_freq"],
        traj.times[-1], n["sample_dt"], n["tol"],
    )
    worst = 0.0
    for name in ("x", "p", "x2", "impurity", "S_tls"):
        a, b = getattr(traj, name), getattr(bigger, name)
        m = min(len(a), len(b))
        scale = max(float(np.max(np.abs(b[:m]))), 1e-300)
        worst = max(worst, float(np.max(np.abs(a[:m] - b[:m]))) / scale)
    ok = worst < CONVERGENCE_RTOL
    if not ok:
        log.warning("Fock cutoff %d not converged: relative change %.2e at %d",
                    n["fock_dim"], worst, n["fock_dim"] + 10)
    return {"fock_dim": n["fock_dim"], "compared_with": n["fock_dim"] + 10,
            "max_relative_change": worst, "converged": ok}


def simulate(cfg) -> tuple[Trajectory, dict]:
    """Run one configured trajectory and build its JSON summary."""
    params = config.model_params(cfg)
    spectrum = config.bath_spectrum(cfg)
    n = cfg["numerics"]
    traj = run_trajectory(
        params, spectrum, config.alpha(cfg), n["fock_dim"], n["ref_freq"],
        _t_end(cfg, params.spin_count), n["sample_dt"], n["tol"],
    )
    summary = {
        "config": config.public(cfg),
        "thermo": thermo.summary(params, spectrum=spectrum),
        "diagnostics": traj.diagnostics,
        "warnings": traj.warnings,
        "fits": trajectory_fits(traj, params, **_window(cfg)),
    }
    if n["convergence_check"]:
        summary["convergence"] = convergence_check(cfg, params, spectrum, traj)
    return traj, summary


SWEEP_COLUMNS = ("value", "kappa", "inv_kappa", "dephasing_slope", "inv_dephasing_slope",
                 "R_S", "omega_fit", "omega_eff", "flag")


def sweep_point_params(cfg, value) -> QcsbParams:
    s = cfg["sweep"]
    if s["axis"] == "N":
        if int(value) != value:
            raise ValueError(f"spin count {value} is not an integer")
        return config.model_params(cfg, spin_count=int(value))
    overrides = {"coupling_freq": float(value)}
    if s["bare_freq_rule"] == "complement":
        rest = s["total_freq_sq"] - float(value) ** 2
        if rest < -1e-12:
            raise ValueError(f"omega={value} exceeds sqrt(total_freq_sq)")
        overrides["bare_freq"] = math.sqrt(max(rest, 0.0))
    return config.model_params(cfg, **overrides)


def sweep_point(cfg, value) -> dict:
    row = {k: float("nan") for k in SWEEP_COLUMNS}
    row["value"] = float(value)
    flags = []
    try:
        params = sweep_point_params(cfg, value)
        row["omega_eff"] = thermo.effective_frequency(params)
        try:
            row["R_S"] = thermo.entropic_parameter(params)
        except ZeroDivisionError:
            flags.append("R_S")
        n = cfg["numerics"]
        traj = run_trajectory(
            params, config.bath_spectrum(cfg), config.alpha(cfg), n["fock_dim"], n["ref_freq"],
            _t_end(cfg, params.spin_count), n["sample_dt"], n["tol"],
        )
        fits = trajectory_fits(traj, params, **_window(cfg))
        osc = fits["x_oscillation"]
        if osc is not None:
            row["kappa"] = osc["kappa"]
            row["inv_kappa"] = 1 / osc["kappa"] if osc["kappa"] > 0 else float("inf")
            row["omega_fit"] = osc["omega"]
        else:
            flags.append("fit")
        slope = fits["dephasing_slope"]
        if slope is not None:
            row["dephasing_slope"] = slope
            row["inv_dephasing_slope"] = 1 / slope if slope > 0 else float("inf")
        else:
            flags.append("slope")
    except Exception as exc:  # a failed point is recorded, the sweep goes on
        log.error("sweep point %s failed: %s", value, exc)
        flags.append(type(exc).__name__)
    row["flag"] = "|".join(flags)
    return row


def _line(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    ok = np.isfinite(xs) & np.isfinite(ys)
    try:
        return analysis.scaling_fit(xs[ok], ys[ok]).as_dict()
    except analysis.FitError as exc:
        return {"error": str(exc)}


def sweep(cfg, executor=None) -> tuple[dict, dict]:
    values = cfg["sweep"]["values"]
    if not values:
        raise config.ConfigError("sweep.values: must be a nonempty list")
    if executor is not None:
        rows = list(executor.map(lambda v: sweep_point(cfg, v), values))
    else:
        rows = [sweep_point(cfg, v) for v in values]
    columns = {k: [r[k] for r in rows] for k in SWEEP_COLUMNS}
    axis = cfg["sweep"]["axis"]
    if axis == "N":
        fits = {
            "inv_kappa_vs_N": _line(columns["value"], columns["inv_kappa"]),
            "inv_dephasing_vs_N": _line(columns["value"], columns["inv_dephasing_slope"]),
        }
    else:
        fits = {"dephasing_vs_R_S": _line(columns["R_S"], columns["dephasing_slope"])}
    payload = {
        "axis": axis,
        "config": config.public(cfg),
        "fits": fits,
        "failed_points": [r["value"] for r in rows
                          if not (np.isfinite(r["kappa"]) or np.isfinite(r["dephasing_slope"]))],
        "flagged_points": {str(r["value"]): r["flag"] for r in rows if r["flag"]},
    }
    return columns, payload
