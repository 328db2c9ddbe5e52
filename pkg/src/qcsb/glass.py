"""Entropic spring parameter of amorphous solids from the standard tunneling model.

SI units throughout.  A phonon mode of frequency ``omega_p`` couples to the
TLS ensemble with density of states ``Pbar`` and relaxation-rate
distribution ``P(eps, Gamma) = Pbar / (2 Gamma sqrt(1 - Gamma/Gamma_max(eps)))``.
Only TLSs with ``Gamma > omega_p`` and ``eps < k_B T`` contribute.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy import constants
from scipy.integrate import quad
from scipy.optimize import brentq

log = logging.getLogger(__name__)

HBAR = constants.hbar
K_B = constants.k
EV = constants.electron_volt

#: documented material fields and their units
MATERIAL_FIELDS = {
    "name": "free text",
    "Pbar": "TLS density of states, 1/(J m^3)",
    "gamma_L": "longitudinal deformation potential, J (or eV with gamma_unit: eV)",
    "gamma_T": "transverse deformation potential, J (or eV with gamma_unit: eV)",
    "v_L": "longitudinal sound speed, m/s",
    "v_T": "transverse sound speed, m/s",
    "rho": "mass density, kg/m^3",
    "gamma_unit": "J or eV (default J)",
    "source": "free text",
}


class InstabilityError(ArithmeticError):
    """Spin-induced softening exceeds the bare mode stiffness."""


@dataclass(frozen=True)
class GlassMaterial:
    Pbar: float
    gamma_L: float
    gamma_T: float
    v_L: float
    v_T: float
    rho: float
    name: str = "glass"
    source: str = ""

    def __post_init__(self):
        for key in ("Pbar", "gamma_L", "gamma_T", "v_L", "v_T", "rho"):
            val = getattr(self, key)
            if not (isinstance(val, (int, float)) and val > 0 and math.isfinite(val)):
                raise ValueError(f"material field {key} must be a positive number, got {val!r}")

    @classmethod
    def from_mapping(cls, data: dict) -> "GlassMaterial":
        unknown = set(data) - set(MATERIAL_FIELDS)
        if unknown:
            raise ValueError(f"unknown material keys: {sorted(unknown)}")
        data = dict(data)
        unit = data.pop("gamma_unit", "J")
        if unit not in ("J", "eV"):
            raise ValueError(f"gamma_unit must be 'J' or 'eV', got {unit!r}")
        scale = EV if unit == "eV" else 1.0
        missing = {"Pbar", "gamma_L", "gamma_T", "v_L", "v_T", "rho"} - set(data)
        if missing:
            raise ValueError(f"missing material keys: {sorted(missing)}")
        for key in ("gamma_L", "gamma_T"):
            data[key] = float(data[key]) * scale
        for key in ("Pbar", "v_L", "v_T", "rho"):
            data[key] = float(data[key])
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "GlassMaterial":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: expected a mapping of material fields")
        return cls.from_mapping(data.get("material", data))

    @property
    def relaxation_prefactor(self) -> float:
        """(gamma_L^2/v_L^5 + 2 gamma_T^2/v_T^5) / (2 pi rho hbar^4), units 1/(J^3 s)."""
        return (self.gamma_L**2 / self.v_L**5 + 2 * self.gamma_T**2 / self.v_T**5) / (
            2 * math.pi * self.rho * HBAR**4
        )

    @property
    def coupling_strength(self) -> float:
        """Dimensionless gamma_L^2 Pbar / (pi^2 v_L^2 rho) that scales both R_s sums."""
        return self.gamma_L**2 * self.Pbar / (math.pi**2 * self.v_L**2 * self.rho)


def silica() -> GlassMaterial:
    """Packaged vitreous-silica configuration (see ``data/silica.yaml``)."""
    return GlassMaterial.from_file(Path(__file__).with_name("data") / "silica.yaml")


@dataclass(frozen=True)
class TlsMicro:
    Delta: float
    Lambda: float
    g: float

    def __post_init__(self):
        if not self.Lambda > 0:
            raise ValueError(f"tunneling amplitude must be positive, got {self.Lambda}")


@dataclass(frozen=True)
class TlsCoupling:
    eps: float
    g_x: float
    g_z: float
    spring_weight: float  # omega_j^2 * M


def map_tls_to_qcsb(t: TlsMicro) -> TlsCoupling:
    eps = math.hypot(t.Delta, t.Lambda)
    if eps == 0:
        raise ValueError("degenerate TLS: eps = 0")
    g_x = -t.g * t.Lambda / eps
    g_z = t.g * t.Delta / eps
    return TlsCoupling(eps=eps, g_x=g_x, g_z=g_z, spring_weight=4 * g_x**2 / eps)


def _coth(x):
    return 1.0 / np.tanh(x)


def tls_relaxation_rate(m: GlassMaterial, eps: float, Lam: float, T: float) -> float:
    """One-phonon relaxation rate of a TLS with splitting ``eps`` and tunneling ``Lam``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if not 0 < Lam <= eps * (1 + 1e-15):
        raise ValueError(f"need 0 < Lambda <= eps, got Lambda={Lam}, eps={eps}")
    return float(m.relaxation_prefactor * eps * Lam**2 * _coth(eps / (2 * K_B * T)))


def gamma_max(m: GlassMaterial, eps, T: float):
    """Maximal relaxation rate, attained for a symmetric well (Lambda = eps)."""
    eps = np.asarray(eps, dtype=float)
    out = m.relaxation_prefactor * eps**3 * _coth(eps / (2 * K_B * T))
    return float(out) if out.ndim == 0 else out


def boundary_frequency(m: GlassMaterial, T):
    """Mode frequency above which no TLS contributes: Gamma_max(k_B T, T)."""
    T = np.asarray(T, dtype=float)
    return gamma_max(m, K_B * T, T) if T.ndim == 0 else np.array([gamma_max(m, K_B * t, t) for t in T])


def eps_min(m: GlassMaterial, omega_p: float, T: float) -> Optional[float]:
    """Splitting at which Gamma_max equals ``omega_p``; None if the domain is empty."""
    if not omega_p > 0 or not T > 0:
        raise ValueError("omega_p and T must be positive")
    e_top = K_B * T
    g_top = gamma_max(m, e_top, T)
    if g_top <= omega_p:
        return None
    grid = e_top * np.logspace(-8, 0, 81)
    vals = gamma_max(m, grid, T)
    if np.any(np.diff(vals) <= 0):
        raise ArithmeticError("Gamma_max is not increasing in eps; bisection is invalid")
    # small-eps asymptote Gamma_max ~ 2 A k_B T eps^2 gives a safe lower bracket
    lo = min(math.sqrt(omega_p / (2 * m.relaxation_prefactor * K_B * T)) * 1e-3, e_top * 1e-12)
    while gamma_max(m, lo, T) >= omega_p:
        lo *= 1e-3
    return brentq(lambda e: gamma_max(m, e, T) - omega_p, lo, e_top, xtol=1e-300, rtol=1e-12, maxiter=500)


# --- the integrand pieces -------------------------------------------------


def entropic_weight(x):
    """x e^x / (1 + e^x)^2 with x = eps / (k_B T)."""
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return x * e / (1 + e) ** 2


def softening_weight(x):
    """tanh(x/2) / 2."""
    return 0.5 * np.tanh(np.asarray(x, dtype=float) / 2)


def inner_gamma_integral(omega_p: float, gmax: float) -> float:
    """Closed form of int_{omega_p}^{Gmax} dGamma (Gamma/Gmax) / (2 Gamma sqrt(1 - Gamma/Gmax))."""
    if gmax <= omega_p:
        return 0.0
    return math.sqrt(1.0 - omega_p / gmax)


def inner_gamma_integral_quad(omega_p: float, gmax: float) -> float:
    """Same integral by QUADPACK with an algebraic endpoint weight (Gmax - Gamma)^(-1/2)."""
    if gmax <= omega_p:
        return 0.0
    val, _ = quad(
        lambda g: 1.0 / (2.0 * math.sqrt(gmax)), omega_p, gmax,
        weight="alg", wvar=(0.0, -0.5), epsabs=0.0, epsrel=1e-12,
    )
    return val


def tls_count(m: GlassMaterial, omega_p: float, gmax: float) -> float:
    """Closed form of int_{omega_p}^{Gmax} P(eps, Gamma) dGamma = Pbar artanh(sqrt(1 - omega_p/Gmax))."""
    if gmax <= omega_p:
        return 0.0
    return m.Pbar * math.atanh(math.sqrt(1.0 - omega_p / gmax))


def tls_count_quad(m: GlassMaterial, omega_p: float, gmax: float) -> float:
    """The same count by adaptive quadrature after u = sqrt(1 - Gamma/Gmax).

    In u the integrand is Pbar / (1 - u^2), bounded on [0, sqrt(1 - omega_p/Gmax)].
    """
    if gmax <= omega_p:
        return 0.0
    u_top = math.sqrt(1.0 - omega_p / gmax)
    val, _ = quad(lambda u: m.Pbar / (1.0 - u * u), 0.0, u_top, epsabs=0.0, epsrel=1e-12, limit=200)
    return val


@dataclass(frozen=True)
class RsSums:
    """Dimensionless eps-integrals behind R_s (already divided by omega_p^2)."""

    numerator: float
    denominator: float
    eps_min: Optional[float]


def _eps_integral(m, omega_p, T, weight, e_lo, epsrel):
    kT = K_B * T
    x_lo = e_lo / kT

    def integrand(lnx):
        x = math.exp(lnx)
        g = gamma_max(m, x * kT, T)
        return float(weight(x)) * inner_gamma_integral(omega_p, g)

    val, err = quad(integrand, math.log(x_lo), 0.0, epsabs=0.0, epsrel=epsrel, limit=500)
    if not math.isfinite(val) or err > max(10 * epsrel * abs(val), 1e-300):
        raise ArithmeticError(f"eps quadrature did not converge: estimate {val:.6e} +/- {err:.1e}")
    return val


def rs_sums(m: GlassMaterial, omega_p: float, T: float, epsrel: float = 1e-8) -> RsSums:
    e_lo = eps_min(m, omega_p, T)
    if e_lo is None:
        return RsSums(0.0, 0.0, None)
    c = m.coupling_strength
    num = c * _eps_integral(m, omega_p, T, entropic_weight, e_lo, epsrel)
    den = c * _eps_integral(m, omega_p, T, softening_weight, e_lo, epsrel)
    return RsSums(num, den, e_lo)


def rs_integral(m: GlassMaterial, omega_p: float, T: float, epsrel: float = 1e-8) -> float:
    """Entropic spring parameter R_s of a longitudinal mode at (omega_p, T).

    Both TLS sums scale as omega_p^2 times a dimensionless eps-integral, so
    ``R_s = sqrt(num / (1 - den))`` in units of omega_p^2.
    """
    if not omega_p > 0 or not T > 0:
        raise ValueError("omega_p and T must be positive")
    s = rs_sums(m, omega_p, T, epsrel)
    if s.eps_min is None:
        return 0.0
    if 1.0 - s.denominator <= 0:
        raise InstabilityError(
            f"TLS softening {s.denominator:.3e} omega_p^2 exceeds the bare stiffness"
        )
    return math.sqrt(s.numerator / (1.0 - s.denominator))


def rs_numerator_direct(m: GlassMaterial, omega_p: float, T: float, epsrel: float = 1e-10) -> float:
    """Numerator sum by nested 2-D quadrature over (eps, Gamma) of P(eps, Gamma).

    The Gamma integral keeps the square-root singularity at Gamma_max and hands
    it to QUADPACK's algebraic weight instead of using the closed form.
    """
    e_lo = eps_min(m, omega_p, T)
    if e_lo is None:
        return 0.0
    kT = K_B * T

    def over_gamma(lnx):
        x = math.exp(lnx)
        eps = x * kT
        g = gamma_max(m, eps, T)
        if g <= omega_p:
            return 0.0
        # P(eps,G) (G/Gmax) = Pbar / (2 sqrt(Gmax)) * (Gmax - G)^(-1/2)
        inner, _ = quad(
            lambda G: m.Pbar / (2.0 * math.sqrt(g)), omega_p, g,
            weight="alg", wvar=(0.0, -0.5), epsabs=0.0, epsrel=1e-12,
        )
        return float(entropic_weight(x)) * inner / m.Pbar

    val, _ = quad(over_gamma, math.log(e_lo / kT), 0.0, epsabs=0.0, epsrel=epsrel, limit=500)
    return m.coupling_strength * val


@dataclass
class RsGrid:
    freqs: np.ndarray
    temps: np.ndarray
    values: np.ndarray  # shape (len(temps), len(freqs))
    flags: np.ndarray  # "" ok, else error class name
    boundary: np.ndarray  # boundary_frequency(temps)
    messages: list = field(default_factory=list)

    @property
    def computed_fraction(self) -> float:
        return float(np.mean(self.flags == ""))


def rs_grid(
    m: GlassMaterial,
    freq_range=(1e5, 1e10),
    temp_range=(1e-2, 1.0),
    shape=(50, 50),
    epsrel: float = 1e-8,
    executor=None,
) -> RsGrid:
    """R_s on a log-spaced (T, omega_p) grid plus the empty-domain boundary.

    ``shape`` is (n_freq, n_temp).  Cells that fail carry a flag and NaN; the
    grid is still returned.  ``executor`` (anything with ``map``) may be used
    to evaluate temperature rows concurrently; results keep grid order.
    """
    nf, nt = shape
    if min(freq_range) <= 0 or min(temp_range) <= 0 or nf < 1 or nt < 1:
        raise ValueError("grid ranges and sizes must be positive")
    freqs = np.geomspace(freq_range[0], freq_range[1], nf)
    temps = np.geomspace(temp_range[0], temp_range[1], nt)

    def row(T):
        vals, flags, msgs = [], [], []
        for w in freqs:
            try:
                vals.append(rs_integral(m, float(w), float(T), epsrel))
                flags.append("")
            except (ArithmeticError, ValueError) as exc:
                vals.append(float("nan"))
                flags.append(type(exc).__name__)
                msgs.append(f"T={T:.6g} K omega_p={w:.6g} rad/s: {exc}")
        return vals, flags, msgs

    rows = list(executor.map(row, temps)) if executor is not None else [row(T) for T in temps]
    values = np.array([r[0] for r in rows], dtype=float)
    flags = np.array([r[1] for r in rows], dtype=object)
    messages = [msg for r in rows for msg in r[2]]
    return RsGrid(freqs, temps, values, flags, boundary_frequency(m, temps), messages)
