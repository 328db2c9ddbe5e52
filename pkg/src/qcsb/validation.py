"""Self-checks of a build: block solver against the full-space oracle, plus identities.

The report is a flat mapping ``check name -> {value, threshold, passed}``.
``gain_scale`` deliberately perturbs the gain terms of the block generator so
that a harness can confirm the oracle comparison actually detects errors.
"""

from __future__ import annotations

import numpy as np
from scipy.special import comb

from . import thermo
from .dynamics import (
    BathSpectrum,
    BlockGenerator,
    brute_force_evolve,
    evolve,
    hamiltonian_blocks,
    rate_operators,
)
from .statespace import (
    QcsbParams,
    block_state_init,
    build_oscillator_space,
    coherent_state,
    thermal_spin_weights,
)

OBSERVABLES = ("x", "p", "x2", "impurity", "S_tls", "populations")
ORACLE_ATOL = 1e-6
# the full-space reference is integrated this much tighter than the block solver
ORACLE_TOL_FACTOR = 1e-2
HERMITICITY_MAX = 1e-10
POSITIVITY_MIN = -1e-6
EHRENFEST_RTOL = 1e-3
STATIONARITY_MAX = 1e-10
FLIP_RTOL = 1e-12
CHAIN_ATOL = 1e-14


def fig1_params(N: int, **changes) -> QcsbParams:
    """Damped-oscillation reference point: M=1, omega_0=0, omega=1, B=100, beta=0.01."""
    base = QcsbParams(mass=1.0, bare_freq=0.0, coupling_freq=1.0, spin_count=N, spin_gap=100.0, beta=0.01)
    return base.replace(**changes) if changes else base


def _initial(params, fock_dim, alpha=1.0):
    space = build_oscillator_space(fock_dim, params.mass, thermo.default_ref_freq(params))
    weights = thermal_spin_weights(params.spin_count, params.spin_gap, params.beta)
    return space, block_state_init(space, weights, coherent_state(space, alpha))


def oracle_comparison(params: QcsbParams, spectrum: BathSpectrum, fock_dim: int = 16,
                      t_end: float = 20.0, sample_dt: float = 0.1, tol: float = 1e-10,
                      gain_scale: float = 1.0) -> dict:
    """Max absolute difference of every recorded observable between the two solvers."""
    space, state = _initial(params, fock_dim)
    rates = rate_operators(space, params, spectrum)
    hams = hamiltonian_blocks(space, params)
    block = evolve(state, rates, hams, t_end, sample_dt, tol, params=params, gain_scale=gain_scale)
    full = brute_force_evolve(params, spectrum, state.to_full(), t_end, sample_dt,
                              tol * ORACLE_TOL_FACTOR, space=space)
    diffs = {name: float(np.max(np.abs(getattr(block, name) - getattr(full, name)))) for name in OBSERVABLES}
    return {
        "max_abs_diff": diffs,
        "worst": max(diffs.values()),
        "max_trace_deviation": block.diagnostics["max_trace_deviation"],
        "max_hermiticity_error": block.diagnostics["max_hermiticity_error"],
        "min_eigenvalue": block.diagnostics["min_eigenvalue"],
        "min_sector_trace": block.diagnostics["min_sector_trace"],
        "max_spin_coherence": full.diagnostics["max_spin_coherence"],
    }


def ehrenfest_residuals(traj, mass: float) -> tuple[float, float]:
    """Relative mismatch of central differences of <x>, <p> against <p>/M and the spring force."""
    t = traj.times
    dt = t[1] - t[0]
    dx = (traj.x[2:] - traj.x[:-2]) / (2 * dt)
    dp = (traj.p[2:] - traj.p[:-2]) / (2 * dt)
    vx = traj.p[1:-1] / mass
    fp = traj.spring_force[1:-1]
    rx = float(np.max(np.abs(dx - vx)) / np.max(np.abs(vx)))
    rp = float(np.max(np.abs(dp - fp)) / np.max(np.abs(fp)))
    return rx, rp


class Report:
    def __init__(self, settings):
        self.checks = {}
        self.settings = settings

    def add(self, name, value, passed, threshold, detail=None):
        entry = {"value": value, "threshold": threshold, "passed": bool(passed)}
        if detail is not None:
            entry["detail"] = detail
        self.checks[name] = entry

    def as_dict(self) -> dict:
        return {
            "settings": self.settings,
            "checks": self.checks,
            "failed": sorted(k for k, v in self.checks.items() if not v["passed"]),
            "passed": all(v["passed"] for v in self.checks.values()),
        }


def oracle_checks(report: Report, spin_counts=(1, 2, 3), fock_dim=16, t_end=20.0,
                  sample_dt=0.1, tol=1e-10, gain_scale=1.0, gamma=10.0) -> None:
    spectrum = BathSpectrum(gamma_const=gamma)
    for N in spin_counts:
        cmp = oracle_comparison(fig1_params(N), spectrum, fock_dim, t_end, sample_dt, tol, gain_scale)
        report.add(f"oracle_equivalence_N{N}", cmp["worst"], cmp["worst"] <= ORACLE_ATOL, ORACLE_ATOL,
                   cmp["max_abs_diff"])
        report.add(f"spin_diagonality_N{N}", cmp["max_spin_coherence"],
                   cmp["max_spin_coherence"] < 1e-10, 1e-10)


def invariant_checks(report: Report, N=3, fock_dim=16, tol=1e-10, gamma=10.0, gain_scale=1.0,
                     seed=12345) -> None:
    """Trace, Hermiticity, positivity, Ehrenfest, stationarity, flip-rate and thermo identities."""
    spectrum = BathSpectrum(gamma_const=gamma)
    params = fig1_params(N)
    space, state = _initial(params, fock_dim)
    traj = evolve(state, rate_operators(space, params, spectrum), hamiltonian_blocks(space, params),
                  5.0, 0.01, tol, params=params, gain_scale=gain_scale)
    d = traj.diagnostics
    report.add("trace_preservation", d["max_trace_deviation"], d["max_trace_deviation"] <= 10 * tol, 10 * tol)
    report.add("hermiticity", d["max_hermiticity_error"], d["max_hermiticity_error"] <= HERMITICITY_MAX,
               HERMITICITY_MAX)
    report.add("positivity", d["min_eigenvalue"], d["min_eigenvalue"] >= POSITIVITY_MIN, POSITIVITY_MIN)
    report.add("sector_weights_nonnegative", d["min_sector_trace"], d["min_sector_trace"] >= -1e-10, -1e-10)
    rx, rp = ehrenfest_residuals(traj, params.mass)
    report.add("ehrenfest_x", rx, rx <= EHRENFEST_RTOL, EHRENFEST_RTOL)
    report.add("ehrenfest_p", rp, rp <= EHRENFEST_RTOL, EHRENFEST_RTOL)

    # omega = 0: thermal spins, oscillator in an eigenstate of its Hamiltonian
    p0 = QcsbParams(1.0, 1.0, 0.0, N, 2.0, 0.7)
    sp0 = build_oscillator_space(12, 1.0, 1.0)
    rho = np.zeros((12, 12), complex)
    rho[2, 2] = 1.0
    st = block_state_init(sp0, thermal_spin_weights(N, 2.0, 0.7), rho)
    gen = BlockGenerator(rate_operators(sp0, p0, spectrum), hamiltonian_blocks(sp0, p0), gain_scale)
    norm = float(np.max(np.abs(gen(st.blocks))))
    report.add("detailed_balance_stationarity", norm, norm < STATIONARITY_MAX, STATIONARITY_MAX)

    rng = np.random.default_rng(seed)
    worst_flip = worst_chain = worst_force = worst_coef = 0.0
    for _ in range(50):
        p = QcsbParams(1.0 + rng.random(), rng.random(), 2 * rng.random(), int(rng.integers(1, 40)),
                       0.1 + 5 * rng.random(), 0.05 + 3 * rng.random())
        fr = thermo.flip_rate(p, spectrum, 3 * float(rng.random()))
        worst_flip = max(worst_flip, abs(fr.exact - fr.approx) / fr.approx)
        sig = thermo.mean_polarization(p.beta, p.spin_gap)
        chain = thermo.effective_frequency(p) ** 2 - p.bare_freq**2 - p.coupling_freq**2 * sig
        worst_chain = max(worst_chain, abs(chain))
        x = float(rng.normal())
        ws2 = thermo.entropic_frequency(p) ** 2
        worst_force = max(worst_force, abs(thermo.entropic_profile(p, x).force + p.mass * ws2 * x))
        coef = thermo.entropy_x2_coefficient(p)
        worst_coef = max(worst_coef, abs(2 * coef / (p.beta * p.mass) - ws2) / ws2)
    report.add("flip_rate_identity", worst_flip, worst_flip <= FLIP_RTOL, FLIP_RTOL)
    report.add("effective_frequency_chain", worst_chain, worst_chain <= CHAIN_ATOL, CHAIN_ATOL)
    report.add("entropic_force_coefficient", worst_force, worst_force <= 1e-12, 1e-12)
    report.add("entropy_coefficient_vs_entropic_frequency", worst_coef, worst_coef <= 1e-12, 1e-12)

    ident = max(abs(comb(30, k - 1, exact=True) * (30 - k + 1) - comb(30, k, exact=True) * k) for k in range(1, 31))
    report.add("binomial_reindexing", int(ident), ident == 0, 0)


def run_validation(spin_counts=(1, 2, 3), fock_dim: int = 16, t_end: float = 20.0,
                   sample_dt: float = 0.1, tol: float = 1e-10, gain_scale: float = 1.0) -> dict:
    """Run the oracle comparison and the invariant suite; returns the report mapping."""
    report = Report(dict(spin_counts=list(spin_counts), fock_dim=fock_dim, t_end=t_end,
                         sample_dt=sample_dt, tol=tol, oracle_tol=tol * ORACLE_TOL_FACTOR,
                         gain_scale=gain_scale))
    oracle_checks(report, spin_counts, fock_dim, t_end, sample_dt, tol, gain_scale)
    invariant_checks(report, fock_dim=fock_dim, tol=tol, gain_scale=gain_scale)
    return report.as_dict()
