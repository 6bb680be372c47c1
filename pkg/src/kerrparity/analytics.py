"""Closed-form steady states and dephasing rates, plus the numeric coherence oracle."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import fsolve
from scipy.sparse.linalg import expm_multiply

from .model import ModelError, ModelSpec, as_time_dependent
from .operators import OperatorMatrix


@dataclass(frozen=True)
class SteadyStatePrediction:
    alpha_mag: float
    theta_o: float
    lambda_plus: float
    lambda_minus: float
    bifurcation_timescale: float

    @property
    def photon_number(self) -> float:
        return self.alpha_mag**2

    @property
    def above_threshold(self) -> bool:
        return self.alpha_mag > 0


def steady_state(spec: ModelSpec, loss: float | None = None) -> SteadyStatePrediction:
    """Bifurcated amplitude |alpha_o|, phase theta_o and vacuum stability exponents.

    ``loss`` defaults to the single-photon loss seen by the resonator
    (``kappa``, or ``g^2/kappa_f + kappa_int`` when a filter is attached).
    Below threshold the amplitude is 0 and ``theta_o`` is NaN.
    """
    kappa = spec.resonator_loss if loss is None else loss
    eps = spec.eps_p
    lam_p = eps - kappa / 2
    lam_m = -eps - kappa / 2
    tscale = 1.0 / lam_p if lam_p > 0 else math.inf
    if eps <= kappa / 2:
        return SteadyStatePrediction(0.0, math.nan, lam_p, lam_m, tscale)
    if spec.K == 0:
        raise ModelError("Kerr nonlinearity K = 0 leaves the amplitude above threshold undefined")
    amp = ((eps**2 - kappa**2 / 4) / spec.K**2) ** 0.25
    theta = 0.5 * math.atan(kappa / math.sqrt(4 * eps**2 - kappa**2))
    return SteadyStatePrediction(amp, theta, lam_p, lam_m, tscale)


def classical_eom_rhs(x: float, y: float, spec: ModelSpec, loss: float | None = None):
    """Time derivatives of the field quadratures x = <a + a^dag>/2, y = -i<a - a^dag>/2."""
    kappa = spec.resonator_loss if loss is None else loss
    r2 = x * x + y * y
    dx = spec.K * r2 * y + spec.eps_p * y - 0.5 * kappa * x
    dy = -spec.K * r2 * x + spec.eps_p * x - 0.5 * kappa * y
    return dx, dy


def eom_jacobian_at_origin(spec: ModelSpec, loss: float | None = None) -> np.ndarray:
    kappa = spec.resonator_loss if loss is None else loss
    return np.array([[-kappa / 2, spec.eps_p], [spec.eps_p, -kappa / 2]])


def solve_eom_fixed_point(spec: ModelSpec, guess: tuple[float, float], loss: float | None = None):
    """Root of the classical equations of motion near ``guess``."""
    sol, info, ier, msg = fsolve(
        lambda v: classical_eom_rhs(v[0], v[1], spec, loss), guess, xtol=1e-14, full_output=True
    )
    residual = max(map(abs, classical_eom_rhs(sol[0], sol[1], spec, loss)))
    if ier != 1 and residual > 1e-12 * max(1.0, spec.eps_p * math.hypot(*guess)):
        raise RuntimeError(f"fixed-point search failed: {msg}")
    return float(sol[0]), float(sol[1])


def pointer_phase(spec: ModelSpec, loss: float | None = None) -> float:
    """Argument of <a> on the pointer branch of the simulated Hamiltonian.

    Under the quantum Hamiltonian ``eps_p/2 (aa + a+a+) - K/2 a+a+aa`` with
    ``d rho/dt = -i[H, rho] + ...`` the two branches sit at ``-theta_o`` and
    ``pi - theta_o``: the mirror image of the classical quadrature equations,
    which are written for the opposite sign of the Hamiltonian. Homodyne
    detection is aligned with this angle.
    """
    pred = steady_state(spec, loss)
    return 0.0 if math.isnan(pred.theta_o) else -pred.theta_o


@dataclass(frozen=True)
class DephasingRates:
    gamma_e: float
    gamma_e_coarse: float
    gamma_o_naive: float
    gamma_o_eff: float
    kappa_eff: float
    gamma_o_int: float
    squeeze_r: float
    pointer_overlap: float
    alpha_sq: float


def dephasing_rates(spec: ModelSpec, alpha_sq: float | None = None) -> DephasingRates:
    """Closed-form measurement-induced dephasing rates.

    ``gamma_e = kappa (1 - 1/sqrt(cosh 2r))`` with ``r = eps_p/4chi``, which
    is ``kappa (eps_p/4chi)^2`` for small ``r`` and is what the numeric
    coherence oracle reproduces. ``gamma_e_coarse = kappa (eps_p/2chi)^2``
    is kept for comparison only. Filter-dependent rates are NaN when no
    filter is configured.
    """
    if spec.chi == 0:
        raise ModelError("dephasing rates need chi != 0")
    kappa = spec.kappa
    if alpha_sq is None:
        alpha_sq = steady_state(spec).photon_number
    r = spec.eps_p / (4 * spec.chi)
    # 1/sqrt(cosh 2r) without overflow for large r
    overlap = math.sqrt(2.0 * math.exp(-2 * abs(r)) / (1.0 + math.exp(-4 * abs(r))))
    if spec.kappa_f > 0:
        k_eff = spec.g**2 / spec.kappa_f
        g_eff = k_eff * alpha_sq / (1 + (8 * spec.chi / spec.kappa_f) ** 2)
    else:
        k_eff = g_eff = math.nan
    return DephasingRates(
        gamma_e=kappa * (1 - overlap),
        gamma_e_coarse=kappa * (spec.eps_p / (2 * spec.chi)) ** 2,
        gamma_o_naive=kappa * alpha_sq,
        gamma_o_eff=g_eff,
        kappa_eff=k_eff,
        gamma_o_int=spec.kappa_int * alpha_sq,
        squeeze_r=r,
        pointer_overlap=overlap,
        alpha_sq=alpha_sq,
    )


@dataclass
class DephasingFit:
    rate: float
    residual: float
    times: np.ndarray
    coherence: np.ndarray
    flagged: bool = False


def _coherence_superoperator(Hj: np.ndarray, Hk: np.ndarray, Ls: list[np.ndarray]):
    """Sparse generator of dC/dt = -i(Hj C - C Hk) + sum(L C L^dag - {L^dag L, C}/2), row-major vec."""
    D = Hj.shape[0]
    eye = sp.identity(D, format="csr", dtype=complex)
    S = -1j * (sp.kron(sp.csr_array(Hj), eye) - sp.kron(eye, sp.csr_array(Hk).T))
    for L in Ls:
        Ls_ = sp.csr_array(L)
        LdL = sp.csr_array(L.conj().T @ L)
        S = S + sp.kron(Ls_, Ls_.conj()) - 0.5 * (sp.kron(LdL, eye) + sp.kron(eye, LdL.T))
    return sp.csr_array(S)


def _rk4_coherence(Hj, Hk, Ls, C0, times, dt_max):
    """Fixed-step RK4 for the coherence operator under time-dependent Hamiltonians."""
    LdL = sum((L.conj().T @ L for L in Ls), np.zeros_like(C0))
    Ls_d = [(L, L.conj().T) for L in Ls]

    def f(C, t):
        Aj = -1j * Hj.at(t) - 0.5 * LdL
        Ak = 1j * Hk.at(t) - 0.5 * LdL
        out = Aj @ C + C @ Ak
        for L, Ld in Ls_d:
            out += L @ C @ Ld
        return out

    out = np.empty(len(times), dtype=complex)
    out[0] = np.trace(C0)
    C = C0.copy()
    t = times[0]
    for i in range(1, len(times)):
        span = times[i] - t
        n = max(1, int(math.ceil(span / dt_max)))
        h = span / n
        for _ in range(n):
            k1 = f(C, t)
            k2 = f(C + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(C + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(C + h * k3, t + h)
            C = C + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
        t = times[i]
        out[i] = np.trace(C)
    return out


def fit_exponential_decay(times: np.ndarray, values: np.ndarray, t_start: float):
    """Log-linear least squares of |values| over ``t >= t_start``; returns (rate, rms residual)."""
    mask = times >= t_start
    t = times[mask]
    y = np.log(np.abs(values[mask]))
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(-coef[0]), float(np.sqrt(np.mean(resid**2)))


def dephasing_rate_numeric(
    H_j,
    H_k,
    channels: list[tuple[float, OperatorMatrix]],
    horizon: float,
    t_start: float = 1.0,
    n_samples: int = 201,
    initial: np.ndarray | None = None,
    residual_tol: float = 1e-3,
    steps_per_radian: float = 5.0,
) -> DephasingFit:
    """Decay rate of the coherence between two blocks of a QND Hamiltonian.

    Evolves ``C`` (initially the vacuum projector, or ``initial``) under
    ``dC/dt = -i(H_j C - C H_k) + sum_c rate_c (L C L^dag - {L^dag L, C}/2)``
    and fits ``|tr C(t)| ~ exp(-rate t)`` on ``[t_start, horizon]``. A fit
    residual above ``residual_tol`` flags the decay as non-exponential and
    warns; the rate is still returned.
    """
    Hj = as_time_dependent(H_j)
    Hk = as_time_dependent(H_k)
    if Hj.layout != Hk.layout:
        raise ValueError("blocks must share the mode layout")
    if horizon <= t_start:
        raise ValueError("horizon must exceed the fit start")
    D = Hj.layout.dim
    Ls = [math.sqrt(rate) * op.matrix for rate, op in channels if rate > 0]
    if initial is None:
        C0 = np.zeros((D, D), dtype=complex)
        C0[0, 0] = 1.0
    else:
        C0 = np.asarray(initial, dtype=complex)
    times = np.linspace(0.0, horizon, n_samples)

    if Hj.is_static and Hk.is_static:
        S = _coherence_superoperator(Hj.static.matrix, Hk.static.matrix, Ls)
        vecs = expm_multiply(S, C0.ravel(), start=0.0, stop=horizon, num=n_samples, endpoint=True)
        coh = np.array([np.trace(v.reshape(D, D)) for v in vecs])
    else:
        scale = max(
            Hj.max_frequency(), Hk.max_frequency(),
            np.linalg.norm(Hj.static.matrix, 2), np.linalg.norm(Hk.static.matrix, 2),
            0.5 * sum(np.linalg.norm(L, 2) ** 2 for L in Ls),
        )
        coh = _rk4_coherence(Hj, Hk, Ls, C0, times, 1.0 / (steps_per_radian * scale))

    rate, resid = fit_exponential_decay(times, coh, t_start)
    flagged = resid > residual_tol
    if flagged:
        warnings.warn(f"coherence decay is not exponential (fit residual {resid:.3g})", stacklevel=2)
    return DephasingFit(rate, resid, times, coh, flagged)
