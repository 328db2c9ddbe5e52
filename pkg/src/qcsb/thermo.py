"""Closed-form thermodynamics of the quadratic-coupled spin bath (hbar = k_B = 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb, expit

from .statespace import QcsbParams


def mean_polarization(beta: float, spin_gap: float) -> float:
    """Equilibrium up-spin fraction 1 / (1 + e^{beta B})."""
    return float(expit(-beta * spin_gap))


def effective_frequency(params: QcsbParams) -> float:
    return math.sqrt(
        params.bare_freq**2
        + params.coupling_freq**2 * mean_polarization(params.beta, params.spin_gap)
    )


def default_ref_freq(params: QcsbParams) -> float:
    """Fock basis frequency: omega_eff, or max(omega, omega_0, 1) if that vanishes."""
    w = effective_frequency(params)
    if w > 0:
        return w
    return max(params.coupling_freq, params.bare_freq, 1.0)


@dataclass(frozen=True)
class Partition:
    qcsb: float
    tls: float


def partition_qcsb(params: QcsbParams) -> Partition:
    """Oscillator factor 1/(2 sinh(beta omega_eff / 2)) and the single-spin Z_TLS."""
    w = effective_frequency(params)
    if w == 0:
        raise ZeroDivisionError("omega_eff = 0: a free particle has no discrete partition function")
    return Partition(
        qcsb=1.0 / (2 * math.sinh(params.beta * w / 2)),
        tls=1.0 + math.exp(-params.beta * params.spin_gap),
    )


def partition_exact_finite(params: QcsbParams) -> float:
    """Exact finite-N oscillator factor Z / Z_TLS^N from the sector sum.

    Each sector with k up spins is a harmonic oscillator of frequency
    sqrt(omega_0^2 + omega^2 k / N); the sum is weighted by the binomial
    spin-configuration count and normalized by the free-spin partition function.
    """
    N = params.spin_count
    if N > 30:
        raise ValueError(f"exact sector sum limited to N <= 30, got {N}")
    if params.bare_freq == 0:
        raise ZeroDivisionError(
            "omega_0 = 0 leaves the k = 0 sector a free particle; its partition function diverges"
        )
    bB = params.beta * params.spin_gap
    total = 0.0
    for k in range(N + 1):
        wk = math.sqrt(params.bare_freq**2 + params.coupling_freq**2 * k / N)
        # weight e^{-bB k}/(1+e^{-bB})^N in log space
        logw = -bB * k - N * np.logaddexp(0.0, -bB)
        total += comb(N, k, exact=True) * math.exp(logw) / (2 * math.sinh(params.beta * wk / 2))
    return total


@dataclass(frozen=True)
class LinearResponse:
    free_energy_shift: float
    entropy_shift: float


def linear_response(params: QcsbParams, force: float) -> LinearResponse:
    M, w = params.mass, effective_frequency(params)
    dA = -(force**2) / (2 * M * w**2)
    # e^{beta B}/(1+e^{beta B})^2 = sigma(1 - sigma)
    s = mean_polarization(params.beta, params.spin_gap)
    dS = -(params.beta**2) * params.spin_gap * s * (1 - s) * params.coupling_freq**2 * force**2 / (
        2 * M * w**4
    )
    return LinearResponse(dA, dS)


def _entropy_curvature(params: QcsbParams) -> float:
    """beta M omega^2 B e^{bB}/(1+e^{bB})^2, the entropic spring constant M omega_s^2."""
    s = mean_polarization(params.beta, params.spin_gap)
    return params.beta * params.mass * params.coupling_freq**2 * params.spin_gap * s * (1 - s)


@dataclass(frozen=True)
class EntropicProfile:
    entropy_offset: float
    force: float


def entropic_profile(params: QcsbParams, x: float) -> EntropicProfile:
    """Spin entropy relative to x = 0 and the resulting entropic force."""
    kappa = _entropy_curvature(params)
    return EntropicProfile(entropy_offset=-params.beta * kappa * x**2 / 2, force=-kappa * x)


def entropy_x2_coefficient(params: QcsbParams) -> float:
    """Magnitude of d S_TLS / d x^2 in the fast-rethermalization limit."""
    return params.beta * _entropy_curvature(params) / 2


def entropic_frequency(params: QcsbParams) -> float:
    return math.sqrt(_entropy_curvature(params) / params.mass)


def entropic_parameter(params: QcsbParams) -> float:
    """R_S = omega_s / omega_eff."""
    w = effective_frequency(params)
    if w == 0:
        raise ZeroDivisionError("R_S undefined for omega_eff = 0")
    return entropic_frequency(params) / w


@dataclass(frozen=True)
class FlipRate:
    exact: float
    approx: float


def flip_rate(params: QcsbParams, spectrum, x2: float, p_up: float | None = None) -> FlipRate:
    """Spin flip rate at fixed x^2, summed over both directions.

    With ``p_up`` omitted the Gibbs value is used, for which the weighted sum
    collapses to ``2 gamma e^{-bE} / (1 - e^{-2bE})``.
    """
    if x2 < 0:
        raise ValueError("x2 must be nonnegative")
    E = params.spin_gap + params.delta * x2
    bE = params.beta * E
    gamma = float(spectrum.rate(E))
    nbar = math.exp(-bE) / -math.expm1(-bE)  # 1/(e^{bE} - 1) without overflow
    if p_up is None:
        p_up = gibbs_tls_state(params, math.sqrt(x2)).p_up
    exact = gamma * (nbar + 1) * p_up + gamma * nbar * (1 - p_up)
    approx = 2 * gamma * math.exp(-bE) / -math.expm1(-2 * bE)
    return FlipRate(exact, approx)


@dataclass(frozen=True)
class TlsPopulations:
    p_up: float
    p_down: float


def gibbs_tls_state(params: QcsbParams, x: float) -> TlsPopulations:
    E = params.spin_gap + params.delta * x**2
    p_up = float(expit(-params.beta * E))
    return TlsPopulations(p_up, float(expit(params.beta * E)))


def summary(params: QcsbParams, force: float = 0.0, x: float = 0.0, spectrum=None) -> dict:
    """Every closed-form quantity as a flat dict (used by the ``thermo`` command)."""
    out = {
        "M": params.mass,
        "omega0": params.bare_freq,
        "omega": params.coupling_freq,
        "N": params.spin_count,
        "B": params.spin_gap,
        "beta": params.beta,
        "delta": params.delta,
        "mean_polarization": mean_polarization(params.beta, params.spin_gap),
        "omega_eff": effective_frequency(params),
        "omega_s": entropic_frequency(params),
    }
    w = out["omega_eff"]
    if w > 0:
        Z = partition_qcsb(params)
        out.update(Z_qcsb=Z.qcsb, Z_tls=Z.tls, R_S=entropic_parameter(params))
        lr = linear_response(params, force)
        out.update(force=force, dA=lr.free_energy_shift, dS=lr.entropy_shift)
    else:
        out.update(Z_qcsb=None, Z_tls=1.0 + math.exp(-params.beta * params.spin_gap), R_S=None)
    if params.bare_freq > 0 and params.spin_count <= 30:
        out["Z_exact_finite"] = partition_exact_finite(params)
    prof = entropic_profile(params, x)
    out.update(x=x, entropy_offset=prof.entropy_offset, F_S=prof.force)
    g = gibbs_tls_state(params, x)
    out.update(p_up=g.p_up, p_down=g.p_down)
    if spectrum is not None:
        fr = flip_rate(params, spectrum, x**2)
        out.update(flip_rate=fr.exact, flip_rate_approx=fr.approx)
    return out
