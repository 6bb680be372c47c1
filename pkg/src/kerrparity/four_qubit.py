"""Four-qubit parity measurement through a resonator coupled to a harmonic filter.

Each dispersive shift of the four-qubit register is simulated as its own
resonator x filter block (see :mod:`kerrparity.model`). Odd blocks bifurcate
and leak photons through the filter at a single frequency; even blocks only
see off-resonant drives. The residual which-block information carried by
the sideband terms sets the slow dephasing inside the odd subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.optimize import fsolve

from .analytics import (
    DephasingFit,
    dephasing_rate_numeric,
    dephasing_rates,
    fit_exponential_decay,
    steady_state,
)
from .integrators import lindblad_evolve
from .measurement import write_csv
from .model import (
    ModelError,
    ModelSpec,
    TimeDependentHamiltonian,
    build_collapse_ops,
    build_four_qubit_effective,
    two_mode_ladders,
)
from .operators import HilbertLayout, OperatorMatrix, QuantumState, fock_destroy, embed


@dataclass(frozen=True)
class ParityBlock:
    shift_units: int  # dispersive shift in units of chi
    degeneracy: int
    parity: str
    basis_states: tuple[str, ...]
    hamiltonian: TimeDependentHamiltonian | None = None

    @property
    def label(self) -> str:
        return f"{self.shift_units:+d}chi" if self.shift_units else "0"


@dataclass
class ParityBlockSet:
    blocks: list[ParityBlock]
    channels: list[tuple[float, OperatorMatrix]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    def by_shift(self, units: int) -> ParityBlock:
        for b in self.blocks:
            if b.shift_units == units:
                return b
        raise KeyError(units)

    @property
    def odd(self) -> list[ParityBlock]:
        return [b for b in self.blocks if b.parity == "odd"]

    @property
    def even(self) -> list[ParityBlock]:
        return [b for b in self.blocks if b.parity == "even"]

    def total_degeneracy(self) -> int:
        return sum(b.degeneracy for b in self.blocks)


def shift_table(qubit_count: int = 4) -> dict[int, list[str]]:
    """Basis states grouped by total shift ``sum(sigma_z)`` with sigma_z|0> = +|0>."""
    table: dict[int, list[str]] = {}
    for bits in product("01", repeat=qubit_count):
        label = "".join(bits)
        units = qubit_count - 2 * label.count("1")
        table.setdefault(units, []).append(label)
    return dict(sorted(table.items()))


def build_parity_blocks(spec: ModelSpec, include_sidebands: bool = True, with_hamiltonians: bool = True):
    """One rotating-frame two-mode model per distinct dispersive shift of four qubits."""
    if spec.qubit_count != 4:
        raise ModelError("build_parity_blocks needs qubit_count = 4")
    if spec.fock_dim_filter is None or spec.kappa_f <= 0 or spec.g == 0:
        raise ModelError("four-qubit blocks need a filter: fock_dim_filter, kappa_f > 0 and g != 0")
    blocks = []
    for units, states in shift_table(4).items():
        H = (
            build_four_qubit_effective(spec, units * spec.chi, include_sidebands)
            if with_hamiltonians
            else None
        )
        parity = "odd" if states[0].count("1") % 2 else "even"
        blocks.append(ParityBlock(units, len(states), parity, tuple(states), H))
    return ParityBlockSet(blocks, build_collapse_ops(spec))


def classical_odd_fixed_point(spec: ModelSpec) -> tuple[complex, complex]:
    """Classical steady fields (alpha, beta) of a bifurcated odd block.

    Solves ``da/dt = -i(eps_p a* - K|a|^2 a + g/2 f) - kappa_int/2 a`` and
    ``df/dt = -i g/2 a - kappa_f/2 f`` starting from the adiabatic estimate,
    which lies on the branch with ``Arg(alpha) = -theta_o``.
    """
    pred = steady_state(spec)
    if not pred.above_threshold:
        return 0j, 0j
    a0 = pred.alpha_mag * np.exp(-1j * pred.theta_o)
    b0 = -1j * spec.g * a0 / spec.kappa_f

    def rhs(v):
        a = v[0] + 1j * v[1]
        f = v[2] + 1j * v[3]
        da = -1j * (spec.eps_p * np.conj(a) - spec.K * abs(a) ** 2 * a + 0.5 * spec.g * f) - 0.5 * spec.kappa_int * a
        df = -0.5j * spec.g * a - 0.5 * spec.kappa_f * f
        return [da.real, da.imag, df.real, df.imag]

    sol, _, ier, msg = fsolve(rhs, [a0.real, a0.imag, b0.real, b0.imag], xtol=1e-13, full_output=True)
    if ier != 1:
        raise RuntimeError(f"classical fixed point not found: {msg}")
    return complex(sol[0], sol[1]), complex(sol[2], sol[3])


@dataclass
class BlockResponse:
    times: np.ndarray
    n_resonator: np.ndarray
    n_filter: np.ndarray
    a_mean: np.ndarray
    f_mean: np.ndarray
    max_tail: float
    kappa_f: float

    @property
    def resonator_amplitude(self) -> np.ndarray:
        """RMS field sqrt(<a+a>); the mean field vanishes for a symmetric bifurcation."""
        return np.sqrt(np.clip(self.n_resonator, 0.0, None))

    @property
    def filter_amplitude(self) -> np.ndarray:
        return np.sqrt(np.clip(self.n_filter, 0.0, None))

    @property
    def output_amplitude(self) -> np.ndarray:
        """Emitted filter field sqrt(kappa_f <f+f>)."""
        return math.sqrt(self.kappa_f) * self.filter_amplitude


def _block_response(spec, H, horizon, n_samples, tail_tol):
    layout, a, f = two_mode_ladders(spec)
    rho0 = np.zeros(layout.dim, dtype=complex)
    rho0[0] = 1.0
    obs = {
        "n_a": OperatorMatrix(layout, a.conj().T @ a),
        "n_f": OperatorMatrix(layout, f.conj().T @ f),
        "a": OperatorMatrix(layout, a),
        "f": OperatorMatrix(layout, f),
    }
    times = np.linspace(0.0, horizon, n_samples)
    res = lindblad_evolve(QuantumState(layout, rho0), H, build_collapse_ops(spec), times, obs)
    if res.max_tail > tail_tol:
        raise ModelError(
            f"truncation tail population {res.max_tail:.2e} exceeds {tail_tol:.0e}; raise the Fock dimensions"
        )
    e = res.expectations
    return BlockResponse(
        times, e["n_a"].real, e["n_f"].real, e["a"], e["f"], res.max_tail, spec.kappa_f
    )


def odd_block_bifurcation(
    spec: ModelSpec,
    horizon: float,
    shift_sign: int = 1,
    include_sidebands: bool = False,
    n_samples: int = 101,
    tail_tol: float = 1e-3,
) -> BlockResponse:
    """Unconditional evolution of an odd block (shift ``+-2chi``) from vacuum."""
    if shift_sign not in (1, -1):
        raise ValueError("shift_sign must be +1 or -1")
    H = build_four_qubit_effective(spec, 2 * shift_sign * spec.chi, include_sidebands)
    return _block_response(spec, H, horizon, n_samples, tail_tol)


def even_block_response(
    spec: ModelSpec,
    shift_units: int,
    horizon: float,
    fock_dims: tuple[int, int] | None = (8, 4),
    n_samples: int = 51,
    tail_tol: float = 1e-3,
) -> BlockResponse:
    """Residual excitation of an even block under its off-resonant drives.

    Even blocks stay near vacuum, so by default they use small truncations;
    the tail monitor rejects the run if that is not enough.
    """
    if shift_units not in (-4, 0, 4):
        raise ValueError("even blocks have shifts 0 or +-4chi")
    if fock_dims is not None:
        spec = spec.with_(fock_dim_resonator=max(8, fock_dims[0]), fock_dim_filter=fock_dims[1])
    H = build_four_qubit_effective(spec, shift_units * spec.chi)
    return _block_response(spec, H, horizon, n_samples, tail_tol)


@dataclass
class SidebandEstimate:
    rate_numeric: float
    rate_closed_form: float
    fit: DephasingFit
    alpha: complex
    beta: complex
    horizon: float

    @property
    def error_probability_numeric(self) -> float:
        return self.rate_numeric * self.horizon

    def error_probability(self, tau: float) -> tuple[float, float]:
        return self.rate_numeric * tau, self.rate_closed_form * tau


def sideband_dephasing_estimate(
    spec: ModelSpec,
    include_sidebands: bool = True,
    fluctuation_dims: tuple[int, int] = (8, 4),
    horizon: float = 6.0,
    t_start: float = 2.0,
    n_samples: int = 81,
    steps_per_radian: float = 5.0,
) -> SidebandEstimate:
    """Dephasing rate between the two odd blocks caused by their differing sideband terms.

    Both blocks are written in ladders displaced by the classical fixed point
    ``(alpha, beta)``, so the truncations only need to hold the quantum
    fluctuations. The coherence operator starts from the displaced vacuum
    (the coherent pointer state) and its trace decay is fitted after the
    fluctuations have relaxed. Every drive term rotates at a multiple of
    ``4 chi``, so samples are taken at whole drive periods to keep the
    micromotion out of the fit.
    """
    period = 2 * math.pi / (4 * abs(spec.chi))
    spacing = period * max(1, math.ceil(horizon / (n_samples - 1) / period))
    horizon = spacing * (n_samples - 1)
    alpha, beta = classical_odd_fixed_point(spec)
    fspec = spec.with_(fock_dim_resonator=max(8, fluctuation_dims[0]), fock_dim_filter=fluctuation_dims[1])
    disp = (alpha, beta)
    Hp = build_four_qubit_effective(fspec, 2 * spec.chi, include_sidebands, displacement=disp)
    Hm = build_four_qubit_effective(fspec, -2 * spec.chi, include_sidebands, displacement=disp)
    channels = build_collapse_ops(fspec, displacement=disp)
    fit = dephasing_rate_numeric(
        Hp, Hm, channels, horizon, t_start=t_start, n_samples=n_samples,
        steps_per_radian=steps_per_radian,
    )
    closed = dephasing_rates(spec).gamma_o_eff if include_sidebands else 0.0
    return SidebandEstimate(fit.rate, closed, fit, alpha, beta, horizon)


@dataclass
class SidebandSweep:
    chi_over_kappa_f: np.ndarray
    rate_numeric: np.ndarray
    rate_closed_form: np.ndarray

    COLUMNS = ("chi_over_kappa_f", "rate_numeric", "rate_closed_form")

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.COLUMNS, zip(self.chi_over_kappa_f, self.rate_numeric, self.rate_closed_form))

    def lorentzian_r2(self) -> float:
        """R^2 of log(rate_numeric) against log[A / (1 + (8 chi/kappa_f)^2)] with A fitted."""
        y = np.log(self.rate_numeric)
        shape = -np.log1p((8 * self.chi_over_kappa_f) ** 2)
        log_a = np.mean(y - shape)
        ss_res = np.sum((y - shape - log_a) ** 2)
        ss_tot = np.sum((y - y.mean()) ** 2)
        return float(1.0 - ss_res / ss_tot)


def sideband_sweep(spec: ModelSpec, ratios, **kwargs) -> SidebandSweep:
    """Sideband dephasing versus chi/kappa_f at fixed kappa_f."""
    ratios = np.asarray(list(ratios), dtype=float)
    num, closed = [], []
    for x in ratios:
        est = sideband_dephasing_estimate(spec.with_(chi=x * spec.kappa_f), **kwargs)
        num.append(est.rate_numeric)
        closed.append(est.rate_closed_form)
    return SidebandSweep(ratios, np.array(num), np.array(closed))


def effective_resonator_decay(
    g: float, kappa_f: float, horizon: float | None = None, fock_dims: tuple[int, int] = (3, 3)
) -> float:
    """Photon decay rate of a bare resonator emptied through a damped filter.

    Starts from one resonator photon and fits the exponential decay of
    ``<a+a>``; for ``kappa_f >> g`` the result approaches ``g^2 / kappa_f``.
    """
    layout = HilbertLayout(0, fock_dims)
    a = embed(fock_destroy(fock_dims[0]), 0, layout).matrix
    f = embed(fock_destroy(fock_dims[1]), 1, layout).matrix
    H = OperatorMatrix(layout, 0.5 * g * (a @ f.conj().T + a.conj().T @ f))
    psi = np.zeros(layout.dim, dtype=complex)
    psi[fock_dims[1]] = 1.0  # |1>_a |0>_f
    k_eff = g**2 / kappa_f
    if horizon is None:
        horizon = 3.0 / k_eff
    times = np.linspace(0.0, horizon, 121)
    res = lindblad_evolve(
        QuantumState(layout, psi), H, [(kappa_f, OperatorMatrix(layout, f))], times,
        {"n_a": OperatorMatrix(layout, a.conj().T @ a)},
    )
    rate, _ = fit_exponential_decay(times, res.expectations["n_a"].real, 10.0 / kappa_f)
    return rate
