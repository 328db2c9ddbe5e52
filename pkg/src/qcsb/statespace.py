"""Truncated Fock space and the permutation-symmetric spin-sector state.

Units are natural (hbar = k_B = 1).  The joint oscillator + spin state is
stored as N+1 oscillator blocks ``W_k``; block ``k`` is the oscillator
operator attached to *every* spin configuration with ``k`` up spins, so the
full density matrix is ``sum_c |c><c| (x) W_{k(c)}``.
"""

from __future__ import annotations

import math
from itertools import combinations
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.special import comb, gammaln


class TruncationError(ValueError):
    """Fock cutoff too small for the requested state."""


@dataclass(frozen=True)
class QcsbParams:
    """Model constants of the quadratic-coupled spin bath.

    Attributes
    ----------
    mass : oscillator mass M
    bare_freq : bare oscillator frequency omega_0
    coupling_freq : coupling frequency omega (fully polarized stiffening)
    spin_count : number of two-level systems N
    spin_gap : TLS level splitting B
    beta : inverse temperature
    """

    mass: float
    bare_freq: float
    coupling_freq: float
    spin_count: int
    spin_gap: float
    beta: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.coupling_freq >= 0:
            raise ValueError(f"coupling_freq must be >= 0, got {self.coupling_freq}")
        if not self.bare_freq >= 0:
            raise ValueError(f"bare_freq must be >= 0, got {self.bare_freq}")
        if int(self.spin_count) != self.spin_count or self.spin_count < 1:
            raise ValueError(f"spin_count must be an integer >= 1, got {self.spin_count}")
        if not self.spin_gap > 0:
            raise ValueError(f"spin_gap must be positive, got {self.spin_gap}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "spin_count", int(self.spin_count))

    @property
    def delta(self) -> float:
        """Per-spin x^2 coupling M omega^2 / (2N)."""
        return self.mass * self.coupling_freq**2 / (2 * self.spin_count)

    def replace(self, **changes) -> "QcsbParams":
        kw = dict(
            mass=self.mass,
            bare_freq=self.bare_freq,
            coupling_freq=self.coupling_freq,
            spin_count=self.spin_count,
            spin_gap=self.spin_gap,
            beta=self.beta,
        )
        kw.update(changes)
        return QcsbParams(**kw)


@dataclass(frozen=True, eq=False)
class OscillatorSpace:
    """Fock-basis oscillator operators truncated to ``dim`` levels."""

    dim: int
    mass: float
    ref_freq: float
    x_op: np.ndarray = field(repr=False)
    p_op: np.ndarray = field(repr=False)
    x2_op: np.ndarray = field(repr=False)
    x_eigvals: np.ndarray = field(repr=False)
    x_eigvecs: np.ndarray = field(repr=False)

    @cached_property
    def p2_op(self) -> np.ndarray:
        return self.p_op @ self.p_op

    @cached_property
    def number_op(self) -> np.ndarray:
        return np.diag(np.arange(self.dim, dtype=complex))


def build_oscillator_space(dim: int, mass: float, ref_freq: float) -> OscillatorSpace:
    """Ladder-operator construction of x and p in a basis of frequency ``ref_freq``.

    ``x2_op`` is the matrix square of the truncated ``x_op``; its last diagonal
    entry differs from the analytic matrix element, which is a truncation
    artifact controlled by the cutoff.
    """
    if int(dim) != dim or dim < 2:
        raise ValueError(f"Fock cutoff must be an integer >= 2, got {dim}")
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass}")
    if not ref_freq > 0:
        raise ValueError(f"ref_freq must be positive, got {ref_freq}")
    dim = int(dim)
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1)
    x_scale = math.sqrt(1.0 / (2 * mass * ref_freq))
    p_scale = math.sqrt(mass * ref_freq / 2.0)
    x_op = (x_scale * (a + a.T)).astype(complex)
    p_op = 1j * p_scale * (a.T - a)
    # x is real symmetric tridiagonal: eigh_tridiagonal would also do, eigh is plenty
    xi, U = np.linalg.eigh(x_op.real)
    return OscillatorSpace(
        dim=dim,
        mass=float(mass),
        ref_freq=float(ref_freq),
        x_op=x_op,
        p_op=p_op,
        x2_op=x_op @ x_op,
        x_eigvals=xi,
        x_eigvecs=U.astype(complex),
    )


def matrix_function_of_x2(space: OscillatorSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Return ``U diag(f(xi^2)) U^dagger`` for the truncated position spectrum."""
    s = space.x_eigvals**2
    vals = np.asarray(f(s), dtype=float)
    if vals.shape == ():
        vals = np.full_like(s, float(vals))
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"function is not finite at x^2 eigenvalue {s[i]!r} (x = {space.x_eigvals[i]!r})"
        )
    U = space.x_eigvecs
    out = (U * vals) @ U.conj().T
    return 0.5 * (out + out.conj().T)


def coherent_state(space: OscillatorSpace, alpha: complex, min_norm: float = 0.9999) -> np.ndarray:
    """Projector onto the coherent state |alpha>, renormalized after truncation."""
    n = np.arange(space.dim)
    a2 = abs(alpha) ** 2
    if a2 == 0:
        amp = np.zeros(space.dim, dtype=complex)
        amp[0] = 1.0
    else:
        log_mag = -a2 / 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
        amp = np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))
    captured = float(np.sum(np.abs(amp) ** 2))
    if captured < min_norm:
        raise TruncationError(
            f"cutoff {space.dim} captures only {captured:.6f} of |alpha={alpha}>, need {min_norm}"
        )
    amp = amp / math.sqrt(captured)
    return np.outer(amp, amp.conj())


@dataclass(frozen=True, eq=False)
class SectorWeights:
    """Per-configuration spin populations ``w_k`` for each up-spin count k."""

    N: int
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.shape != (self.N + 1,):
            raise ValueError(f"expected {self.N + 1} sector weights, got shape {w.shape}")
        if (w < 0).any():
            raise ValueError("sector weights must be nonnegative")
        total = float(np.dot(binomials(self.N), w))
        if abs(total - 1) > 1e-12:
            raise ValueError(f"sector weights are not normalized: sum C(N,k) w_k = {total}")
        object.__setattr__(self, "w", w)

    @property
    def populations(self) -> np.ndarray:
        """Total probability of each sector, C(N,k) w_k."""
        return binomials(self.N) * self.w


def binomials(N: int) -> np.ndarray:
    return comb(N, np.arange(N + 1), exact=False)


def thermal_spin_weights(N: int, spin_gap: float, beta: float) -> SectorWeights:
    """Independent Gibbs spins: ``w_k = e^{-beta B k} / (1 + e^{-beta B})^N``."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be an integer >= 1, got {N}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    N = int(N)
    bb = beta * spin_gap
    k = np.arange(N + 1)
    # log(1 + e^{-bb}) without overflow for either sign of bb
    log_z1 = np.logaddexp(0.0, -bb)
    w = np.exp(-bb * k - N * log_z1)
    # renormalize away the last-ulp drift so the SectorWeights check is exact
    w = w / np.dot(binomials(N), w)
    return SectorWeights(N, w)


@dataclass(frozen=True, eq=False)
class BlockState:
    """Spin-diagonal permutation-symmetric joint state, blocks shaped (N+1, d, d)."""

    space: OscillatorSpace
    N: int
    blocks: np.ndarray = field(repr=False)

    @property
    def sector_traces(self) -> np.ndarray:
        return np.einsum("kii->k", self.blocks).real

    @property
    def trace(self) -> float:
        return float(np.dot(binomials(self.N), self.sector_traces))

    def oscillator_state(self) -> np.ndarray:
        return np.tensordot(binomials(self.N), self.blocks, axes=1)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.blocks - self.blocks.conj().transpose(0, 2, 1))))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.oscillator_state())[0])

    def to_full(self) -> np.ndarray:
        """Dense (2^N d) x (2^N d) matrix, spins first in the tensor order.

        Spin basis index bit ``j`` set means spin ``j`` is up (``sigma_z = +1``).
        Only sensible for small N.
        """
        return blocks_to_full(self.blocks, self.N)


def block_state_init(space: OscillatorSpace, weights: SectorWeights, rho_osc: np.ndarray) -> BlockState:
    rho_osc = np.asarray(rho_osc, dtype=complex)
    if rho_osc.shape != (space.dim, space.dim):
        raise ValueError(f"oscillator state has shape {rho_osc.shape}, expected {(space.dim,) * 2}")
    tr = np.trace(rho_osc).real
    if abs(tr - 1) > 1e-10:
        raise ValueError(f"oscillator state trace is {tr}, expected 1")
    blocks = weights.w[:, None, None] * rho_osc[None, :, :]
    return BlockState(space, weights.N, blocks)


def up_counts(N: int) -> np.ndarray:
    """Number of up spins for each of the 2^N computational configurations."""
    idx = np.arange(2**N)
    return np.array([bin(i).count("1") for i in idx])


def blocks_to_full(blocks: np.ndarray, N: int) -> np.ndarray:
    d = blocks.shape[-1]
    counts = up_counts(N)
    full = np.zeros((2**N * d, 2**N * d), dtype=complex)
    for c, k in enumerate(counts):
        full[c * d:(c + 1) * d, c * d:(c + 1) * d] = blocks[k]
    return full


def symmetric_basis_element(N: int, j: int) -> np.ndarray:
    """Diagonal of C_j: the j-th elementary symmetric polynomial in the sigma_z^i."""
    # sigma_z eigenvalue +1 for up (bit set), -1 for down
    z = np.array([[1 if (c >> i) & 1 else -1 for i in range(N)] for c in range(2**N)])
    diag = np.zeros(2**N)
    for subset in combinations(range(N), j):
        diag += np.prod(z[:, list(subset)], axis=1) if subset else 1.0
    return diag


def weights_to_symmetric_coefficients(weights: SectorWeights) -> np.ndarray:
    """Coefficients a_j with ``rho_s = sum_j a_j C_j`` for a diagonal symmetric spin state.

    Uses orthogonality ``Tr(C_i C_j) = 2^N C(N,j) delta_ij`` of the
    elementary symmetric products.
    """
    N = weights.N
    diag = weights.w[up_counts(N)]
    a = np.empty(N + 1)
    for j in range(N + 1):
        cj = symmetric_basis_element(N, j)
        a[j] = np.dot(cj, diag) / (2**N * comb(N, j, exact=True))
    return a
