"""Entropic spring master equation in sector-block form, plus a full-space oracle.

The spin bath enters only through two oscillator operators, the down-flip
and up-flip rates ``Gamma_down = gamma(x^2) (nbar(x^2) + 1)`` and
``Gamma_up = gamma(x^2) nbar(x^2)``, both matrix functions of ``x^2``.  Every
rate operator is placed symmetrically around the state (anticommutators in
both the loss and the gain terms).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.integrate import RK45, solve_ivp

from .statespace import (
    BlockState,
    OscillatorSpace,
    QcsbParams,
    binomials,
    matrix_function_of_x2,
    up_counts,
)

log = logging.getLogger(__name__)

BRUTE_FORCE_MAX_N = 4
# eigenvalues and sector weights above this are integration noise, not a broken state
POSITIVITY_FLOOR = -1e-6


class StiffnessError(RuntimeError):
    """Adaptive step size collapsed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PositivityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class BathSpectrum:
    """Bath seen by each spin: a constant rate or a spectral density J(E).

    For ``kind="ohmic"`` the rate at energy E is ``2 pi J(E)``; the default J
    is linear, ``J(E) = ohmic_coupling * E``.
    """

    kind: str = "constant"
    gamma_const: float = 1.0
    J: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ohmic_coupling: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "ohmic"):
            raise ValueError(f"unknown bath spectrum kind {self.kind!r}")
        if self.kind == "constant" and not self.gamma_const > 0:
            raise ValueError(f"gamma_const must be positive, got {self.gamma_const}")
        if self.kind == "ohmic" and self.J is None and not self.ohmic_coupling > 0:
            raise ValueError("ohmic spectrum needs J or a positive ohmic_coupling")

    def rate(self, energy):
        energy = np.asarray(energy, dtype=float)
        if self.kind == "constant":
            return np.full_like(energy, self.gamma_const)
        J = self.J if self.J is not None else (lambda e: self.ohmic_coupling * e)
        return 2 * np.pi * np.asarray(J(energy), dtype=float)


@dataclass(frozen=True, eq=False)
class RateOperators:
    down: np.ndarray
    up: np.ndarray


def _thermal_occupation(beta, energy):
    # 1 / (e^{bE} - 1), written so that large bE underflows to 0 instead of overflowing
    be = beta * np.asarray(energy, dtype=float)
    return np.exp(-be) / -np.expm1(-be)


def rate_operators(space: OscillatorSpace, params: QcsbParams, spectrum: BathSpectrum) -> RateOperators:
    B, delta, beta = params.spin_gap, params.delta, params.beta

    def f_down(s):
        e = B + delta * s
        return spectrum.rate(e) * (_thermal_occupation(beta, e) + 1)

    def f_up(s):
        e = B + delta * s
        return spectrum.rate(e) * _thermal_occupation(beta, e)

    return RateOperators(
        down=matrix_function_of_x2(space, f_down),
        up=matrix_function_of_x2(space, f_up),
    )


def hamiltonian_block(space: OscillatorSpace, params: QcsbParams, k: int) -> np.ndarray:
    """Oscillator Hamiltonian seen by a configuration with ``k`` up spins."""
    N = params.spin_count
    if int(k) != k or not 0 <= k <= N:
        raise ValueError(f"sector index k={k} outside 0..{N}")
    M = params.mass
    stiffness = M * (params.bare_freq**2 + params.coupling_freq**2 * k / N) / 2
    return (
        space.p2_op / (2 * M)
        + stiffness * space.x2_op
        + params.spin_gap * k * np.eye(space.dim)
    )


def hamiltonian_blocks(space: OscillatorSpace, params: QcsbParams) -> np.ndarray:
    return np.stack([hamiltonian_block(space, params, k) for k in range(params.spin_count + 1)])


def _dagger(a):
    return a.conj().swapaxes(-1, -2)


class BlockGenerator:
    """Right-hand side of the block master equation with precomputed sector factors.

    ``gain_scale`` multiplies both gain terms; it exists only so validation can
    check that a perturbed generator is caught by the oracle comparison.
    """

    def __init__(self, rates: RateOperators, hams: np.ndarray, gain_scale: float = 1.0):
        hams = np.asarray(hams, dtype=complex)
        self.N = hams.shape[0] - 1
        self.d = hams.shape[1]
        k = np.arange(self.N + 1, dtype=float)
        self.k_half = (k / 2)[:, None, None]
        self.rest_half = ((self.N - k) / 2)[:, None, None]
        self.gain_scale = gain_scale
        # Every term is Y W + (Y W)^dagger for Hermitian W, so the generator is
        # assembled as X + X^dagger with X_k = L_k W_k + gains.  When the sector
        # Hamiltonians are affine in k, L_k = L_0 + k L_1 and one stacked matrix
        # product serves every block.
        step = hams[1] - hams[0] if self.N > 0 else np.zeros_like(hams[0])
        affine = hams[0][None] + k[:, None, None] * step[None]
        self.affine = bool(
            np.allclose(affine, hams, rtol=0, atol=1e-12 * max(1.0, np.abs(hams).max()))
        )
        self.hams = hams
        down, up = rates.down, rates.up
        L0 = -1j * hams[0] - (self.N / 2) * up
        L1 = -1j * step - down / 2 + up / 2
        g = gain_scale
        if self.affine:
            self.ops = np.concatenate([L0, L1, g * down / 2, g * up / 2], axis=0)
        else:
            self.ops = np.concatenate([down, up], axis=0)
            self.Lk = (
                -1j * hams
                - self.k_half * down[None]
                - self.rest_half * up[None]
            )
            self.g = g
        self.kcol = k[None, :, None]
        self.rest = (self.N - k)[None, :, None]

    def __call__(self, W: np.ndarray) -> np.ndarray:
        K1, d = self.N + 1, self.d
        flat = W.transpose(1, 0, 2).reshape(d, K1 * d)
        # prod[m] is laid out (i, k, j) for block element (k, i, j)
        prod = (self.ops @ flat).reshape(-1, d, K1, d)
        if self.affine:
            X = prod[0] + self.kcol * prod[1]
            X[:, :-1] += self.rest[:, :-1] * prod[2][:, 1:]
            X[:, 1:] += self.kcol[:, 1:] * prod[3][:, :-1]
            X = X.transpose(1, 0, 2)
        else:
            X = self.Lk @ W
            Dt = prod[0].transpose(1, 0, 2)
            Ut = prod[1].transpose(1, 0, 2)
            X[:-1] += self.g * self.rest_half[:-1] * Dt[1:]
            X[1:] += self.g * self.k_half[1:] * Ut[:-1]
        return X + _dagger(X)


def lindblad_rhs(state, rates: RateOperators, hams) -> np.ndarray:
    """Time derivative of the sector blocks, shape (N+1, d, d)."""
    W = state.blocks if isinstance(state, BlockState) else np.asarray(state)
    return BlockGenerator(rates, hams)(W)


@dataclass
class Trajectory:
    """Sampled observables; ``populations[i, k]`` is the total weight of sector k."""

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    x2: np.ndarray
    impurity: np.ndarray
    S_tls: np.ndarray
    dS_tls: np.ndarray
    populations: np.ndarray
    spring_force: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def N(self) -> int:
        return self.populations.shape[1] - 1

    def columns(self) -> dict:
        cols = {
            "t": self.times,
            "x": self.x,
            "p": self.p,
            "x2": self.x2,
            "impurity": self.impurity,
            "S_tls": self.S_tls,
            "dS_tls": self.dS_tls,
        }
        for k in range(self.N + 1):
            cols[f"P_{k}"] = self.populations[:, k]
        return cols

    def uniform(self) -> "Trajectory":
        """Drop the trailing sample at ``t_end`` when it closes a shorter interval."""
        t = self.times
        if len(t) > 2 and abs((t[-1] - t[-2]) - (t[1] - t[0])) > 1e-9 * (t[1] - t[0]):
            return self.truncated(len(t) - 1)
        return self

    def truncated(self, n: int) -> "Trajectory":
        return Trajectory(
            self.times[:n], self.x[:n], self.p[:n], self.x2[:n], self.impurity[:n],
            self.S_tls[:n], self.dS_tls[:n], self.populations[:n], self.spring_force[:n],
            dict(self.diagnostics), list(self.warnings),
        )


@dataclass(frozen=True)
class ObservableRecord:
    x: float
    p: float
    x2: float
    impurity: float
    S_tls: float
    populations: np.ndarray
    spring_force: float
    rho_osc_min_eig: float


def _entropy_from_sector_traces(traces, binom):
    if (traces < POSITIVITY_FLOOR).any():
        raise ValueError(f"negative spin population {traces.min():.3e}")
    w = np.clip(traces, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)
    return float(-np.dot(binom, terms))


def observables(state: BlockState, params: Optional[QcsbParams] = None) -> ObservableRecord:
    """Oscillator moments, impurity, and spin entropy of a block state.

    ``spring_force`` (the Ehrenfest value of d<p>/dt) needs ``params``; it is
    NaN otherwise.
    """
    space, N, W = state.space, state.N, state.blocks
    binom = binomials(N)
    rho = np.tensordot(binom, W, axes=1)
    traces = np.einsum("kii->k", W).real
    x = np.trace(space.x_op @ rho).real
    if params is not None:
        k = np.arange(N + 1)
        om2 = params.bare_freq**2 + params.coupling_freq**2 * k / N
        xk = np.einsum("ij,kji->k", space.x_op, W).real
        force = -params.mass * float(np.dot(binom * om2, xk))
    else:
        force = float("nan")
    return ObservableRecord(
        x=float(x),
        p=float(np.trace(space.p_op @ rho).real),
        x2=float(np.trace(space.x2_op @ rho).real),
        impurity=float(1 - np.vdot(rho, rho).real),
        S_tls=_entropy_from_sector_traces(traces, binom),
        populations=binom * traces,
        spring_force=force,
        rho_osc_min_eig=float(np.linalg.eigvalsh(rho)[0]),
    )


class _Recorder:
    def __init__(self, space, params):
        self.space = space
        self.params = params
        self.rows = []
        self.min_eig = math.inf
        self.min_pop = math.inf
        self.max_herm = 0.0
        self.max_trace_dev = 0.0

    def record(self, t, W, N):
        state = BlockState(self.space, N, W)
        rec = observables(state, self.params)
        self.rows.append((t, rec))
        self.min_eig = min(self.min_eig, rec.rho_osc_min_eig)
        self.min_pop = min(self.min_pop, float(np.einsum("kii->k", W).real.min()))
        self.max_herm = max(self.max_herm, state.hermiticity_error())
        self.max_trace_dev = max(self.max_trace_dev, abs(state.trace - 1))

    def trajectory(self, diagnostics) -> Trajectory:
        return _trajectory_from_records(self.rows, diagnostics)


def _trajectory_from_records(rows, diagnostics) -> Trajectory:
    if not rows:
        raise ValueError("no samples recorded")
    t = np.array([r[0] for r in rows])
    recs = [r[1] for r in rows]
    S = np.array([r.S_tls for r in recs])
    return Trajectory(
        times=t,
        x=np.array([r.x for r in recs]),
        p=np.array([r.p for r in recs]),
        x2=np.array([r.x2 for r in recs]),
        impurity=np.array([r.impurity for r in recs]),
        S_tls=S,
        dS_tls=S - S[0],
        populations=np.array([r.populations for r in recs]),
        spring_force=np.array([r.spring_force for r in recs]),
        diagnostics=diagnostics,
    )


def _sample_times(t_end, sample_dt):
    n = int(math.floor(t_end / sample_dt + 1e-9))
    times = sample_dt * np.arange(n + 1)
    if t_end - times[-1] > 1e-9 * t_end:
        times = np.append(times, t_end)
    return times


def _error_norm(err, y0, y1, tol, weight=1.0):
    # max norm: an rms over the many near-zero coherences lets the few large
    # entries carry errors well above tol.  ``weight`` maps block entries to
    # their contribution C(N,k) W_k to the physical state.
    scale = tol + tol * weight * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.max(weight * np.abs(err) / scale))


def evolve(
    state: BlockState,
    rates: RateOperators,
    hams,
    t_end: float,
    sample_dt: float,
    tol: float = 1e-8,
    params: Optional[QcsbParams] = None,
    gain_scale: float = 1.0,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """Integrate the block master equation with an adaptive Dormand-Prince 4(5) pair.

    Samples come from the pair's 4th-order continuous extension.  The
    Butcher tableau is scipy's ``RK45``; stepping, error control and
    sampling are done here so the blocks can be re-symmetrized after every
    accepted step.  ``tol`` is used as both relative and absolute tolerance,
    applied entry-wise (max norm) to the binomially weighted blocks
    ``C(N,k) W_k``, i.e. to the entries as they enter the physical state.
    """
    if not t_end > 0 or not sample_dt > 0 or not tol > 0:
        raise ValueError("t_end, sample_dt and tol must all be positive")
    A, B, E, P = RK45.A, RK45.B, RK45.E, RK45.P
    n_stages = RK45.n_stages
    rhs = BlockGenerator(rates, hams, gain_scale=gain_scale)
    N = state.N
    samples = _sample_times(t_end, sample_dt)
    rec = _Recorder(state.space, params)

    shape = state.blocks.shape
    weight = np.repeat(binomials(N), shape[1] * shape[2])

    def deriv(v):
        return rhs(v.reshape(shape)).ravel()

    def hermitize(v):
        m = v.reshape(shape)
        return (0.5 * (m + _dagger(m))).ravel()

    y = state.blocks.astype(complex).ravel().copy()
    f = deriv(y)
    t = 0.0
    rec.record(0.0, y.reshape(shape), N)
    next_sample = 1

    # initial step: first-derivative heuristic, refined by the controller
    d0 = np.sqrt(np.mean(np.abs(y / (tol + tol * np.abs(y))) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f / (tol + tol * np.abs(y))) ** 2))
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
    h = min(h, t_end, sample_dt)
    h_min = 1e-12 * t_end

    K = np.empty((n_stages + 1, y.size), dtype=complex)
    steps = rejected = 0
    while t < t_end:
        if steps + rejected >= max_steps:
            raise StiffnessError(f"exceeded {max_steps} steps at t={t:.6g}", rec.trajectory({}))
        h = min(h, t_end - t)
        if h < h_min:
            diag = dict(steps=steps, rejected=rejected, t_fail=t)
            raise StiffnessError(
                f"step size {h:.3e} underflowed at t={t:.6g}; loosen tol or reduce gamma*N",
                rec.trajectory(diag),
            )
        K[0] = f
        for s in range(1, n_stages):
            K[s] = deriv(y + h * (A[s, :s] @ K[:s]))
        y_new = y + h * (B @ K[:n_stages])
        f_new = deriv(y_new)
        K[n_stages] = f_new
        err_norm = _error_norm(h * (E @ K), y, y_new, tol, weight)
        if err_norm <= 1.0:
            t_new = t + h
            while next_sample < len(samples) and samples[next_sample] <= t_new + 1e-12 * t_end:
                theta = (samples[next_sample] - t) / h
                coeff = P @ np.cumprod(np.full(P.shape[1], theta))
                y_s = hermitize(y + h * (coeff @ K))
                rec.record(float(samples[next_sample]), y_s.reshape(shape), N)
                next_sample += 1
            y = hermitize(y_new)
            f = f_new
            t = t_new
            steps += 1
            factor = 10.0 if err_norm == 0 else min(10.0, 0.9 * err_norm ** -0.2)
        else:
            rejected += 1
            factor = max(0.2, 0.9 * err_norm ** -0.2)
        h *= factor

    y = y.reshape(shape)
    final = BlockState(state.space, N, y)
    diagnostics = dict(
        steps=steps,
        rejected=rejected,
        min_eigenvalue=rec.min_eig,
        min_sector_trace=rec.min_pop,
        max_hermiticity_error=max(rec.max_herm, final.hermiticity_error()),
        max_trace_deviation=max(rec.max_trace_dev, abs(final.trace - 1)),
        tol=tol,
    )
    traj = rec.trajectory(diagnostics)
    if rec.min_eig < POSITIVITY_FLOOR:
        msg = f"oscillator state lost positivity: min eigenvalue {rec.min_eig:.3e}"
        warnings.warn(msg, PositivityWarning, stacklevel=2)
        traj.warnings.append(msg)
    traj.final_state = final
    return traj


# ---------------------------------------------------------------------------
# Full tensor-space oracle


def _spin_operator(single: np.ndarray, j: int, N: int) -> np.ndarray:
    """Embed a 2x2 operator on spin j; basis bit j set means spin j is up."""
    dim = 2**N
    out = np.zeros((dim, dim), dtype=complex)
    for c in range(dim):
        bit = (c >> j) & 1
        for new_bit in (0, 1):
            amp = single[1 - new_bit, 1 - bit]  # 2x2 matrices ordered (up, down)
            if amp != 0:
                c_new = (c & ~(1 << j)) | (new_bit << j)
                out[c_new, c] += amp
    return out


SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |down><up| in (up, down) order
SIGMA_PLUS = SIGMA_MINUS.T.copy()
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


class FullSpaceModel:
    """Master equation written term by term with per-spin operators on the 2^N d space."""

    def __init__(self, space: OscillatorSpace, params: QcsbParams, spectrum: BathSpectrum):
        N = params.spin_count
        if N > BRUTE_FORCE_MAX_N:
            raise ValueError(
                f"full-space oracle refuses N={N}: the state has (2^N d)^2 entries; use N <= {BRUTE_FORCE_MAX_N}"
            )
        self.space = space
        self.params = params
        self.N = N
        d = space.dim
        ns = 2**N
        I_s = np.eye(ns)
        I_o = np.eye(d)
        rates = rate_operators(space, params, spectrum)
        M = params.mass
        self.dim = ns * d

        h_osc = space.p2_op / (2 * M) + M * params.bare_freq**2 / 2 * space.x2_op
        H = np.kron(I_s, h_osc)
        self.lowering = []
        for j in range(N):
            up_proj = (_spin_operator(SIGMA_Z, j, N) + I_s) / 2
            H = H + params.spin_gap * np.kron(up_proj, I_o)
            H = H + M * params.coupling_freq**2 / (2 * N) * np.kron(up_proj, space.x2_op)
            self.lowering.append(np.kron(_spin_operator(SIGMA_MINUS, j, N), I_o))
        self.H = H
        self.G_down = np.kron(I_s, rates.down)
        self.G_up = np.kron(I_s, rates.up)
        self.x_full = np.kron(I_s, space.x_op)
        self.p_full = np.kron(I_s, space.p_op)
        self.x2_full = np.kron(I_s, space.x2_op)
        self.counts = up_counts(N)
        # per-spin operator products, kept sparse; the sum over spins and the
        # sandwich structure of every term stay explicit in rhs()
        Gd, Gu = self.G_down, self.G_up
        self._terms = []
        for L in self.lowering:
            Ld = L.conj().T
            up = Ld @ L  # sigma_+ sigma_-
            down = L @ Ld  # sigma_- sigma_+
            csr = sparse.csr_matrix
            self._terms.append(dict(
                loss=csr(up @ Gd + down @ Gu),
                L=csr(L), Ld=csr(Ld),
                LGd=csr(L @ Gd), GdLd=csr(Gd @ Ld),
                LdGu=csr(Ld @ Gu), GuL=csr(Gu @ L),
            ))

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.H @ rho - rho @ self.H)
        for T in self._terms:
            # {sigma_+ sigma_- Gd + sigma_- sigma_+ Gu, rho}; loss operator is Hermitian
            loss = T["loss"] @ rho
            out -= 0.5 * (loss + loss.conj().T)
            # sigma_- Gd rho sigma_+ + sigma_- rho Gd sigma_+ and the mirrored absorption terms
            gain = (
                T["LGd"] @ (T["Ld"].T @ rho.T).T
                + T["L"] @ (T["GdLd"].T @ rho.T).T
                + T["LdGu"] @ (T["L"].T @ rho.T).T
                + T["Ld"] @ (T["GuL"].T @ rho.T).T
            )
            out += 0.5 * gain
        return out

    def partial_traces(self, rho):
        ns, d = 2**self.N, self.space.dim
        r = rho.reshape(ns, d, ns, d)
        return np.einsum("aiaj->ij", r), np.einsum("aibi->ab", r)

    def observables(self, rho) -> ObservableRecord:
        rho_osc, rho_tls = self.partial_traces(rho)
        ev = np.linalg.eigvalsh(0.5 * (rho_tls + rho_tls.conj().T))
        ev = np.clip(ev, 0.0, None)
        S = float(-np.sum(ev[ev > 0] * np.log(ev[ev > 0])))
        diag = np.diag(rho_tls).real
        pops = np.bincount(self.counts, weights=diag, minlength=self.N + 1)
        N = self.N
        p = self.params
        om2 = p.bare_freq**2 + p.coupling_freq**2 * self.counts / N
        ns, d = 2**N, self.space.dim
        xdiag = np.einsum("ij,aji->a", self.space.x_op, rho.reshape(ns, d, ns, d).diagonal(axis1=0, axis2=2).transpose(2, 0, 1)).real
        return ObservableRecord(
            x=float(np.trace(self.x_full @ rho).real),
            p=float(np.trace(self.p_full @ rho).real),
            x2=float(np.trace(self.x2_full @ rho).real),
            impurity=float(1 - np.vdot(rho_osc, rho_osc).real),
            S_tls=S,
            populations=pops,
            spring_force=-p.mass * float(np.dot(om2, xdiag)),
            rho_osc_min_eig=float(np.linalg.eigvalsh(rho_osc)[0]),
        )

    def spin_coherence(self, rho) -> float:
        """Largest norm of an off-diagonal spin block of ``rho``."""
        ns, d = 2**self.N, self.space.dim
        r = rho.reshape(ns, d, ns, d)
        worst = 0.0
        for a in range(ns):
            for b in range(ns):
                if a != b:
                    worst = max(worst, float(np.max(np.abs(r[a, :, b, :]))))
        return worst


def brute_force_evolve(
    params: QcsbParams,
    spectrum: BathSpectrum,
    rho_full_0: np.ndarray,
    t_end: float,
    sample_dt: float,
    tol: float = 1e-10,
    space: Optional[OscillatorSpace] = None,
    return_states: bool = False,
):
    """Reference propagation of the full (2^N d)-dimensional density matrix.

    Integration is delegated to scipy's DOP853 so the oracle shares no
    stepping code with :func:`evolve`.  ``space`` defaults to a basis with
    ``d`` inferred from the state size at the reference frequency used by
    :func:`default_ref_freq`.
    """
    N = params.spin_count
    if N > BRUTE_FORCE_MAX_N:
        raise ValueError(
            f"full-space oracle refuses N={N}: the state has (2^N d)^2 entries; use N <= {BRUTE_FORCE_MAX_N}"
        )
    if space is None:
        from .statespace import build_oscillator_space
        from .thermo import default_ref_freq

        d = rho_full_0.shape[0] // 2**N
        space = build_oscillator_space(d, params.mass, default_ref_freq(params))
    model = FullSpaceModel(space, params, spectrum)
    D = model.dim
    if rho_full_0.shape != (D, D):
        raise ValueError(f"initial state has shape {rho_full_0.shape}, expected {(D, D)}")
    times = _sample_times(t_end, sample_dt)

    def f(t, y):
        return model.rhs(y.reshape(D, D)).ravel()

    # one solve per sample interval: every recorded state is a step endpoint,
    # so no uncontrolled dense-output interpolation enters the reference
    y = rho_full_0.astype(complex).ravel()
    rows = []
    states = []
    max_coh = 0.0
    nfev = 0
    for i, t in enumerate(times):
        if i > 0:
            sol = solve_ivp(f, (float(times[i - 1]), float(t)), y, method="DOP853", rtol=tol, atol=tol)
            if not sol.success:
                raise StiffnessError(f"reference integration failed at t={t:.6g}: {sol.message}")
            nfev += sol.nfev
            y = sol.y[:, -1]
        rho = y.reshape(D, D)
        rows.append((float(t), model.observables(rho)))
        max_coh = max(max_coh, model.spin_coherence(rho))
        if return_states:
            states.append(rho.copy())
    diag = dict(steps=nfev, max_spin_coherence=max_coh, tol=tol)
    traj = _trajectory_from_records(rows, diag)
    if return_states:
        return traj, states
    return traj
