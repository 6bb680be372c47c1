"""Homodyne-conditioned quantum trajectories and the unconditional master equation.

Conventions
-----------
Channels are ``(rate, L)`` pairs contributing ``rate * D[L]``. The measured
channel has the measurement operator ``M = sqrt(rate) * L * exp(-i theta)``
and the homodyne current is ``j = <M + M^dag> + dW/dt``.

Schemes
-------
``euler-maruyama``
    Literal Ito Euler-Maruyama step of the nonlinear conditioned equations,
    followed by renormalization.
``heun-deterministic-part``
    Heun predictor/corrector on the drift, Euler-Maruyama on the noise.
``exponential``
    The linear (unnormalized) conditioned equation with the static drift
    ``-i H - 1/2 sum L^dag L`` integrated exactly by a precomputed
    propagator, i.e. ``psi <- U (1 + M dY - i H_drive(t) dt) psi`` with the
    record increment ``dY = <M + M^dag> dt + dW``, then renormalized. It
    agrees with ``euler-maruyama`` to first order in ``dt`` but stays stable
    when the Hamiltonian has large eigenvalues (big detunings, high Fock
    levels), where the explicit schemes amplify the truncation tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .model import TimeDependentHamiltonian, as_time_dependent
from .operators import OperatorMatrix, QuantumState

SCHEMES = ("euler-maruyama", "heun-deterministic-part", "exponential")


class IntegratorBlowup(RuntimeError):
    """The state norm collapsed or became non-finite during a step (dt too large)."""


class UnsupportedChannels(ValueError):
    """The pure-state unraveling only supports a single, measured channel."""


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str = "exponential"
    measured_channel_phase: float = 0.0
    efficiency: float = 1.0
    renormalize: bool = True

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if self.efficiency != 1.0:
            raise ValueError("only unit detection efficiency is supported")


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit trajectory seed from ``(master_seed, trajectory index)``."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


class WienerStream:
    """Wiener increments for one trajectory from a Philox generator keyed by ``seed``.

    ``counter`` is the number of increments already handed out, so two
    streams with the same seed produce identical sequences regardless of how
    the draws are chunked.
    """

    def __init__(self, seed: int, dt: float, counter: int = 0):
        self.seed = int(seed)
        self.dt = float(dt)
        self.counter = 0
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))
        if counter:
            self.draw(counter)

    def draw(self, n: int) -> np.ndarray:
        out = self._gen.standard_normal(n) * math.sqrt(self.dt)
        self.counter += n
        return out


def _maybe_sparse(m: np.ndarray, threshold: float = 0.15):
    if m.ndim != 2 or m.shape[0] < 16:
        return m
    if np.count_nonzero(m) <= threshold * m.size:
        return sp.csr_array(m)
    return m


def _apply_blocks(ops, psi: np.ndarray) -> np.ndarray:
    """Apply per-block operators (list of dense or sparse) to ``psi`` of shape (nb, n, B)."""
    if isinstance(ops, np.ndarray):
        return np.matmul(ops, psi)
    return np.stack([op @ psi[b] for b, op in enumerate(ops)])


def _prep_blocks(blocks: np.ndarray):
    blocks = np.asarray(blocks, dtype=complex)
    sparse = [_maybe_sparse(b) for b in blocks]
    if all(isinstance(b, np.ndarray) for b in sparse):
        return blocks
    return sparse


def _drive_coefficient(amp, freq, t):
    return amp * np.exp(1j * freq * t)


class HomodyneSSE:
    """Batched homodyne stochastic Schrodinger equation over block-diagonal operators.

    States have shape ``(nb, n, B)``: ``nb`` independent blocks (for example
    the qubit computational basis states of a QND model), each a vector of
    length ``n``, for ``B`` trajectories. All operators are stacked per block
    with shape ``(nb, n, n)``; the normalization and the homodyne current are
    global across blocks.
    """

    def __init__(
        self,
        H_blocks: np.ndarray,
        measurement_blocks: np.ndarray,
        cfg: IntegratorConfig,
        drives: Sequence[tuple[complex, float, np.ndarray]] = (),
    ):
        self.cfg = cfg
        H = np.asarray(H_blocks, dtype=complex)
        M = np.asarray(measurement_blocks, dtype=complex)
        self.nb, self.n, _ = H.shape
        self._MdM = np.matmul(np.conj(np.swapaxes(M, 1, 2)), M)
        self._M = _prep_blocks(M)
        self._drives = [
            (complex(amp), float(freq), _prep_blocks(op), _prep_blocks(np.conj(np.swapaxes(op, 1, 2))))
            for amp, freq, op in drives
        ]
        self._H = H
        if cfg.scheme == "exponential":
            self._U = scipy.linalg.expm((-1j * H - 0.5 * self._MdM) * cfg.dt)

    def _drive(self, psi: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros_like(psi)
        for amp, freq, op, op_dag in self._drives:
            c = _drive_coefficient(amp, freq, t)
            out += c * _apply_blocks(op, psi) + np.conj(c) * _apply_blocks(op_dag, psi)
        return out

    @staticmethod
    def _inner(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.einsum("bnk,bnk->k", np.conj(x), y)

    def quadrature(self, psi: np.ndarray) -> np.ndarray:
        """<M + M^dag> per trajectory."""
        return 2.0 * self._inner(psi, _apply_blocks(self._M, psi)).real

    def _drift(self, psi, Mpsi, X, t):
        Hpsi = np.matmul(self._H, psi)
        if self._drives:
            Hpsi = Hpsi + self._drive(psi, t)
        return (
            -1j * Hpsi
            - 0.5 * np.matmul(self._MdM, psi)
            + 0.5 * X * Mpsi
            - 0.125 * X**2 * psi
        )

    def step(self, psi: np.ndarray, dW: np.ndarray, t: float = 0.0):
        """Advance all trajectories by one step; returns ``(psi_new, X)``.

        ``X`` is the quadrature expectation at the start of the step, so the
        sampled current of the step is ``X + dW/dt``.
        """
        dt = self.cfg.dt
        Mpsi = _apply_blocks(self._M, psi)
        X = 2.0 * self._inner(psi, Mpsi).real
        scheme = self.cfg.scheme
        if scheme == "exponential":
            dY = X * dt + dW
            phi = psi + Mpsi * dY
            if self._drives:
                phi = phi - 1j * dt * self._drive(psi, t)
            new = np.matmul(self._U, phi)
        else:
            diffusion = (Mpsi - 0.5 * X * psi) * dW
            a0 = self._drift(psi, Mpsi, X, t)
            new = psi + a0 * dt + diffusion
            if scheme == "heun-deterministic-part":
                Mp = _apply_blocks(self._M, new)
                Xp = 2.0 * self._inner(new, Mp).real / self._inner(new, new).real
                a1 = self._drift(new, Mp, Xp, t + dt)
                new = psi + 0.5 * (a0 + a1) * dt + diffusion
        norm2 = self._inner(new, new).real
        if not np.all(np.isfinite(norm2)) or np.any(norm2 < 0.25) or np.any(norm2 > 4.0):
            raise IntegratorBlowup("state norm left [0.5, 2] within one step; reduce dt")
        if self.cfg.renormalize:
            new = new / np.sqrt(norm2)
        return new, X


class HomodyneSME:
    """Batched homodyne stochastic master equation on density matrices ``(B, D, D)``."""

    def __init__(
        self,
        H: TimeDependentHamiltonian,
        channels: Sequence[tuple[float, OperatorMatrix]],
        measured: int | None,
        cfg: IntegratorConfig,
    ):
        self.cfg = cfg
        self.H = as_time_dependent(H)
        D = self.H.layout.dim
        self._Ls = [math.sqrt(rate) * op.matrix for rate, op in channels]
        self._Hs = self.H.static.matrix
        self.measured = measured
        if measured is not None:
            if not 0 <= measured < len(self._Ls):
                raise ValueError("measured channel index out of range")
            self._M = self._Ls[measured] * np.exp(-1j * cfg.measured_channel_phase)
        else:
            self._M = np.zeros((D, D), dtype=complex)
        self._LdL = sum((L.conj().T @ L for L in self._Ls), np.zeros((D, D), dtype=complex))
        if cfg.scheme == "exponential":
            self._U = scipy.linalg.expm((-1j * self._Hs - 0.5 * self._LdL) * cfg.dt)
            self._eye = np.eye(D, dtype=complex)

    def _H_at(self, t: float) -> np.ndarray:
        return self.H.at(t) if self.H.drive_terms else self._Hs

    def _drift(self, rho: np.ndarray, t: float) -> np.ndarray:
        H = self._H_at(t)
        out = -1j * (H @ rho - rho @ H)
        for L in self._Ls:
            Ld = L.conj().T
            out += L @ rho @ Ld - 0.5 * (Ld @ L @ rho + rho @ Ld @ L)
        return out

    def quadrature(self, rho: np.ndarray) -> np.ndarray:
        return 2.0 * np.einsum("ij,bji->b", self._M, rho).real

    def _backaction(self, rho: np.ndarray, X: np.ndarray) -> np.ndarray:
        Md = self._M.conj().T
        return self._M @ rho + rho @ Md - X[:, None, None] * rho

    def step(self, rho: np.ndarray, dW: np.ndarray, t: float = 0.0):
        dt = self.cfg.dt
        X = self.quadrature(rho)
        scheme = self.cfg.scheme
        if scheme == "exponential":
            dY = X * dt + dW
            A = self._eye[None] + self._M[None] * dY[:, None, None]
            if self.H.drive_terms:
                A = A - 1j * dt * self.H.drive_matrix(t)[None]
            A = np.matmul(self._U[None], A)
            new = A @ rho @ np.conj(np.swapaxes(A, 1, 2))
            for i, L in enumerate(self._Ls):
                if i != self.measured:
                    new = new + dt * (L @ rho @ L.conj().T)
        else:
            diffusion = self._backaction(rho, X) * dW[:, None, None]
            a0 = self._drift(rho, t)
            new = rho + a0 * dt + diffusion
            if scheme == "heun-deterministic-part":
                a1 = self._drift(new, t + dt)
                new = rho + 0.5 * (a0 + a1) * dt + diffusion
        new = 0.5 * (new + np.conj(np.swapaxes(new, 1, 2)))
        tr = np.einsum("bii->b", new).real
        if not np.all(np.isfinite(tr)) or np.any(tr < 0.5):
            raise IntegratorBlowup("density-matrix trace collapsed; reduce dt")
        if self.cfg.renormalize:
            new = new / tr[:, None, None]
        return new, X


def _sse_kernel(H, channels, measured, cfg) -> HomodyneSSE:
    H = as_time_dependent(H)
    if not channels:
        M = np.zeros_like(H.static.matrix)
    elif len(channels) == 1 and measured == 0:
        rate, L = channels[0]
        M = math.sqrt(rate) * L.matrix * np.exp(-1j * cfg.measured_channel_phase)
    else:
        raise UnsupportedChannels(
            "pure-state unraveling needs a single channel that is measured; use sme_step"
        )
    drives = [(d.amplitude, d.frequency, d.op[None]) for d in H.drive_terms]
    return HomodyneSSE(H.static.matrix[None], M[None], cfg, drives)


def sse_step(
    state: QuantumState,
    H,
    channels: Sequence[tuple[float, OperatorMatrix]],
    measured: int | None,
    cfg: IntegratorConfig,
    dW: float,
    t: float = 0.0,
) -> QuantumState:
    """One homodyne stochastic Schrodinger step of a pure state.

    Without channels the step is a plain Schrodinger step and ``dW`` is ignored.
    """
    if not state.is_pure:
        raise ValueError("sse_step needs a pure state")
    if abs(np.linalg.norm(state.data) - 1.0) > 1e-6:
        raise ValueError("state is not normalized")
    kernel = _sse_kernel(H, channels, measured, cfg)
    psi, _ = kernel.step(state.data[None, :, None], np.array([dW]), t)
    return QuantumState(state.layout, psi[0, :, 0])


def sme_step(
    state: QuantumState,
    H,
    channels: Sequence[tuple[float, OperatorMatrix]],
    measured: int | None,
    cfg: IntegratorConfig,
    dW: float,
    t: float = 0.0,
) -> QuantumState:
    """One step of the homodyne stochastic master equation."""
    rho = state.density().data
    if abs(np.trace(rho).real - 1.0) > 1e-6:
        raise ValueError("density matrix trace differs from 1")
    kernel = HomodyneSME(as_time_dependent(H), channels, measured, cfg)
    new, _ = kernel.step(rho[None], np.array([dW]), t)
    return QuantumState(state.layout, new[0])


def homodyne_current(
    state: QuantumState, channel: tuple[float, OperatorMatrix], cfg: IntegratorConfig, dW: float
) -> float:
    """Sampled current ``sqrt(rate) <L e^{-i theta} + h.c.> + dW/dt`` for one step."""
    rate, L = channel
    M = math.sqrt(rate) * L.matrix * np.exp(-1j * cfg.measured_channel_phase)
    if state.is_pure:
        m = np.vdot(state.data, M @ state.data)
    else:
        m = np.einsum("ij,ji->", M, state.data)
    return float(2.0 * m.real + dW / cfg.dt)


class Liouvillian:
    """Right-hand side of the Lindblad equation, with sparse operators where it pays."""

    def __init__(self, H, channels: Sequence[tuple[float, OperatorMatrix]]):
        self.H = as_time_dependent(H)
        D = self.H.layout.dim
        Ls = [math.sqrt(rate) * op.matrix for rate, op in channels if rate > 0]
        LdL = sum((L.conj().T @ L for L in Ls), np.zeros((D, D), dtype=complex))
        self._Heff = _maybe_sparse(self.H.static.matrix - 0.5j * LdL)
        self._Ls = [_maybe_sparse(L) for L in Ls]
        self._drives = [
            (d.amplitude, d.frequency, _maybe_sparse(d.op), _maybe_sparse(d.op.conj().T))
            for d in self.H.drive_terms
        ]

    def _heff_apply(self, rho: np.ndarray, t: float) -> np.ndarray:
        X = self._Heff @ rho
        for amp, freq, op, op_dag in self._drives:
            c = _drive_coefficient(amp, freq, t)
            X = X + c * (op @ rho) + np.conj(c) * (op_dag @ rho)
        return X

    def __call__(self, rho: np.ndarray, t: float = 0.0) -> np.ndarray:
        """d rho/dt, evaluated on the Hermitian part of ``rho``.

        The fast form below is only the Lindblad generator for Hermitian
        input. Feeding it the round-off anti-Hermitian part would evolve that
        part under ``-L A L^dag`` alone, which grows like ``exp(N t)`` in a
        truncated Fock space, so the input is symmetrized first.
        """
        rho = 0.5 * (rho + rho.conj().T)
        X = self._heff_apply(rho, t)
        out = -1j * X
        out = out + out.conj().T
        for L in self._Ls:
            LrhoLd = L @ (L @ rho).conj().T
            out = out + LrhoLd
        return out


def lindblad_step(
    state: QuantumState,
    H,
    channels: Sequence[tuple[float, OperatorMatrix]],
    dt: float,
    t: float = 0.0,
) -> QuantumState:
    """One classical fourth-order Runge-Kutta step of the unconditional master equation."""
    rho = state.density().data
    f = Liouvillian(H, channels)
    k1 = f(rho, t)
    k2 = f(rho + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(rho + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(rho + dt * k3, t + dt)
    return QuantumState(state.layout, rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


@dataclass
class LindbladResult:
    times: np.ndarray
    expectations: dict[str, np.ndarray]
    final: QuantumState
    max_tail: float


def lindblad_evolve(
    state: QuantumState,
    H,
    channels: Sequence[tuple[float, OperatorMatrix]],
    times: Sequence[float],
    observables: dict[str, OperatorMatrix] | None = None,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    tail_levels: int = 2,
) -> LindbladResult:
    """Integrate the unconditional master equation with an adaptive Runge-Kutta solver.

    Returns expectation values of ``observables`` on ``times`` and the largest
    population found in the top ``tail_levels`` Fock levels of any mode.
    """
    layout = state.layout
    D = layout.dim
    rho0 = state.density().data
    times = np.asarray(times, dtype=float)
    f = Liouvillian(H, channels)
    observables = observables or {}

    def rhs(t, y):
        return f(y.reshape(D, D), t).ravel()

    sol = solve_ivp(
        rhs, (times[0], times[-1]), rho0.ravel(), t_eval=times,
        method="DOP853", rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise IntegratorBlowup(sol.message)
    ys = sol.y.T.reshape(len(times), D, D)
    expectations = {
        name: np.einsum("ij,tji->t", op.matrix, ys) for name, op in observables.items()
    }
    tail = _tail_projectors(layout, tail_levels)
    max_tail = max(
        (float(np.max(np.einsum("i,tii->t", p, ys).real)) for p in tail), default=0.0
    )
    final = QuantumState(layout, ys[-1])
    return LindbladResult(times, expectations, final, max_tail)


def _tail_projectors(layout, levels: int) -> list[np.ndarray]:
    """Diagonal indicator vectors of the top ``levels`` Fock levels of each mode."""
    out = []
    dims = layout.dims
    for mode in range(len(layout.fock_dims)):
        slot = layout.mode_slot(mode)
        idx = np.indices(dims).reshape(len(dims), -1)[slot]
        out.append((idx >= dims[slot] - levels).astype(float))
    return out
