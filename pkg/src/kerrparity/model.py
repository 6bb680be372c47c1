"""Rotating-frame Hamiltonians and collapse operators.

All rates are in units of the reference decay rate ``kappa`` and times in
units of ``1/kappa``. Absolute frequencies never appear: the resonator is
described in a frame rotating at its (possibly qubit-shifted) frequency and
the filter in a frame rotating at its own frequency.

Four-qubit blocks
-----------------
The four-qubit register is not materialized. Every computational basis
state gives the resonator a dispersive shift ``chi * sum(sigma_z)``, one of
``0, +-2chi, +-4chi``, and each shift is simulated as its own two-mode
(resonator x filter) block. The lab-frame drives are a two-photon pump
``eps_p cos[2(w_r - 2chi)t] + eps_p cos[2(w_r + 2chi)t + phi_p]`` and a
coupling modulation ``g cos[(D_f + 2chi)t] + g cos[(D_f - 2chi)t + phi_g]``.
In a frame rotating at ``w_r + nu`` for the resonator and ``w_f`` for the
filter, keeping only terms that do not rotate at ~``2 w_r`` or ~``D_f``,
a block with shift ``s`` reads::

    H = (s - nu) n - K/2 a+a+aa
        + eps_p/2 [e^{-2i(2chi + nu)t} + e^{i phi_p} e^{2i(2chi - nu)t}] aa + h.c.
        + g/2 [e^{i(2chi - nu)t} + e^{i phi_g} e^{-i(2chi + nu)t}] a f+ + h.c.

Odd blocks (``s = +-2chi``) use ``nu = s``: one pump tone and one coupling
tone become static and the others rotate at ``-+8chi`` and ``-+4chi``.
Even blocks (``s = 0, +-4chi``) use ``nu = 0``: the static part is the
detuned Kerr term ``s n - K/2 a+a+aa`` and every drive term rotates, the
pump tones at ``-+4chi`` and the coupling tones at ``+-2chi``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .operators import (
    HilbertLayout,
    LayoutError,
    OperatorMatrix,
    embed,
    fock_destroy,
    sigma_z,
)


class ModelError(ValueError):
    """Raised for invalid or inconsistent model parameters."""


@dataclass(frozen=True)
class ModelSpec:
    kappa: float = 1.0
    kappa_int: float = 0.0
    K: float = 0.175
    chi: float = 25.0
    eps_p: float = 2.5
    delta: float = 0.0
    g: float = 0.0
    delta_f: float = 0.0  # bookkeeping only, eliminated by the filter frame
    kappa_f: float = 0.0
    fock_dim_resonator: int = 60
    fock_dim_filter: int | None = None
    qubit_count: int = 2
    pump_phase: float = 0.0  # relative phase of the second two-photon tone
    coupling_phase: float = 0.0  # relative phase of the second coupling tone

    def __post_init__(self) -> None:
        rates = ("kappa", "kappa_int", "K", "chi", "eps_p", "delta", "g", "delta_f", "kappa_f")
        for name in rates:
            if not math.isfinite(getattr(self, name)):
                raise ModelError(f"{name} must be finite")
        if self.kappa <= 0:
            raise ModelError("kappa must be > 0")
        if self.kappa_int < 0 or self.kappa_f < 0:
            raise ModelError("decay rates must be >= 0")
        if self.fock_dim_resonator < 8:
            raise ModelError("fock_dim_resonator must be >= 8")
        if self.fock_dim_filter is not None and self.fock_dim_filter < 2:
            raise ModelError("fock_dim_filter must be >= 2")
        if self.qubit_count not in (0, 2, 4):
            raise ModelError("qubit_count must be 0, 2 or 4")

    @property
    def has_filter(self) -> bool:
        return self.fock_dim_filter is not None

    @property
    def kappa_eff(self) -> float:
        """Resonator decay through an adiabatically eliminated filter, g^2/kappa_f."""
        if self.kappa_f == 0:
            raise ModelError("kappa_eff needs kappa_f > 0")
        return self.g**2 / self.kappa_f

    @property
    def resonator_loss(self) -> float:
        """Total single-photon loss seen by the nonlinear resonator."""
        if self.has_filter and self.kappa_f > 0:
            return self.kappa_eff + self.kappa_int
        return self.kappa

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown model fields: {sorted(unknown)}")
        return cls(**data)

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


def _four_qubit_preset() -> ModelSpec:
    # kappa_eff = g^2/kappa_f = 1, |alpha_o|^2 = 10, chi/kappa_f = 20
    eps = 2.5
    return ModelSpec(
        kappa=1.0,
        K=math.sqrt(eps**2 - 0.25) / 10.0,
        chi=400.0,
        eps_p=eps,
        g=math.sqrt(20.0),
        kappa_f=20.0,
        fock_dim_resonator=30,
        fock_dim_filter=12,
        qubit_count=4,
    )


PRESETS: dict[str, ModelSpec] = {
    "text-params": ModelSpec(K=0.175),
    "figure-params": ModelSpec(K=0.17),
    "four-qubit": _four_qubit_preset(),
}


@dataclass(frozen=True)
class DriveTerm:
    """One rotating term ``amplitude * e^{i frequency t} * op`` (plus its h.c.)."""

    op: np.ndarray
    amplitude: complex
    frequency: float
    label: str = ""

    def coefficient(self, t: float) -> complex:
        return self.amplitude * np.exp(1j * self.frequency * t)


@dataclass(frozen=True)
class TimeDependentHamiltonian:
    """H(t) = static + sum_k [c_k(t) O_k + h.c.]."""

    static: OperatorMatrix
    drive_terms: tuple[DriveTerm, ...] = field(default_factory=tuple)

    @property
    def layout(self) -> HilbertLayout:
        return self.static.layout

    @property
    def is_static(self) -> bool:
        return not self.drive_terms

    def drive_matrix(self, t: float) -> np.ndarray:
        out = np.zeros_like(self.static.matrix)
        for term in self.drive_terms:
            m = term.coefficient(t) * term.op
            out += m + m.conj().T
        return out

    def at(self, t: float) -> np.ndarray:
        return self.static.matrix + self.drive_matrix(t)

    def max_frequency(self) -> float:
        return max((abs(d.frequency) for d in self.drive_terms), default=0.0)


def as_time_dependent(H) -> TimeDependentHamiltonian:
    if isinstance(H, TimeDependentHamiltonian):
        return H
    if isinstance(H, OperatorMatrix):
        return TimeDependentHamiltonian(H)
    raise TypeError(f"cannot use {type(H).__name__} as a Hamiltonian")


def _kerr_terms(a: np.ndarray, spec: ModelSpec, detuning: float) -> np.ndarray:
    ad = a.conj().T
    return (
        detuning * ad @ a
        + 0.5 * spec.eps_p * (a @ a + ad @ ad)
        - 0.5 * spec.K * ad @ ad @ a @ a
    )


def build_kerr_resonator(spec: ModelSpec) -> OperatorMatrix:
    """Parametrically driven Kerr resonator, optionally detuned by ``spec.delta``."""
    if spec.qubit_count != 0:
        raise ModelError("build_kerr_resonator needs qubit_count = 0")
    layout = HilbertLayout(0, (spec.fock_dim_resonator,))
    a = fock_destroy(spec.fock_dim_resonator)
    return OperatorMatrix(layout, _kerr_terms(a, spec, spec.delta))


def build_two_qubit_model(spec: ModelSpec) -> OperatorMatrix:
    """Two qubits dispersively coupled with equal strength chi to the driven resonator."""
    if spec.qubit_count != 2:
        raise ModelError("build_two_qubit_model needs qubit_count = 2")
    layout = HilbertLayout(2, (spec.fock_dim_resonator,))
    a = embed(fock_destroy(spec.fock_dim_resonator), 2, layout).matrix
    n = a.conj().T @ a
    sz = embed(sigma_z(), 0, layout).matrix + embed(sigma_z(), 1, layout).matrix
    H = spec.chi * sz @ n + _kerr_terms(a, spec, spec.delta)
    return OperatorMatrix(layout, H)


def qubit_blocks(op: OperatorMatrix, atol: float = 1e-12) -> np.ndarray:
    """Diagonal blocks of an operator that is block-diagonal in the qubit basis.

    Returns an array of shape ``(2**qubit_count, d_modes, d_modes)``; raises if
    any off-diagonal block is nonzero (the operator does not commute with
    every sigma_z).
    """
    q = op.layout.qubit_count
    nq = 2**q
    d = op.layout.dim // nq
    m = op.matrix.reshape(nq, d, nq, d)
    blocks = np.stack([m[i, :, i, :] for i in range(nq)])
    off = m.copy()
    for i in range(nq):
        off[i, :, i, :] = 0
    if np.max(np.abs(off), initial=0.0) > atol:
        raise LayoutError("operator is not block-diagonal in the qubit basis")
    return blocks


def two_mode_layout(spec: ModelSpec) -> HilbertLayout:
    if spec.fock_dim_filter is None:
        raise ModelError("filter mode is not configured (fock_dim_filter is None)")
    return HilbertLayout(0, (spec.fock_dim_resonator, spec.fock_dim_filter))


def two_mode_ladders(spec: ModelSpec, displacement: tuple[complex, complex] | None = None):
    """Resonator and filter lowering operators on the two-mode space.

    With ``displacement = (alpha, beta)`` the operators are ``a + alpha`` and
    ``f + beta``, i.e. the remaining ladders act on fluctuations around a
    classical field.
    """
    layout = two_mode_layout(spec)
    a = embed(fock_destroy(spec.fock_dim_resonator), 0, layout).matrix
    f = embed(fock_destroy(spec.fock_dim_filter), 1, layout).matrix
    if displacement is not None:
        eye = np.eye(layout.dim)
        a = a + displacement[0] * eye
        f = f + displacement[1] * eye
    return layout, a, f


ALLOWED_SHIFTS = (-4, -2, 0, 2, 4)


def _shift_units(spec: ModelSpec, dispersive_shift: float) -> int:
    if spec.chi == 0:
        raise ModelError("chi must be nonzero for the four-qubit model")
    units = dispersive_shift / spec.chi
    for u in ALLOWED_SHIFTS:
        if abs(units - u) < 1e-9:
            return u
    raise ModelError(f"dispersive shift {dispersive_shift} is not one of 0, +-2chi, +-4chi")


def build_four_qubit_effective(
    spec: ModelSpec,
    dispersive_shift: float,
    include_sidebands: bool = True,
    displacement: tuple[complex, complex] | None = None,
) -> TimeDependentHamiltonian:
    """Rotating-frame Hamiltonian of one four-qubit dispersive-shift block.

    Odd blocks (``+-2chi``) with ``include_sidebands=False`` reduce to the
    static frequency-erasure Hamiltonian ``H_R + g/2 (a f+ + a+ f)``. Even
    blocks carry no resonant drive, so their rotating drive terms are always
    kept. See the module docstring for the full term list.
    """
    units = _shift_units(spec, dispersive_shift)
    layout, a, f = two_mode_ladders(spec, displacement)
    chi = spec.chi
    shift = units * chi
    odd = units in (-2, 2)
    nu = shift if odd else 0.0

    ad = a.conj().T
    static = (shift - nu) * ad @ a - 0.5 * spec.K * ad @ ad @ a @ a
    aa = a @ a
    afd = a @ f.conj().T
    candidates = [
        (aa, 0.5 * spec.eps_p, -2 * (2 * chi + nu), "pump(w_r-2chi)"),
        (aa, 0.5 * spec.eps_p * np.exp(1j * spec.pump_phase), 2 * (2 * chi - nu), "pump(w_r+2chi)"),
        (afd, 0.5 * spec.g, (2 * chi - nu), "coupling(D_f+2chi)"),
        (afd, 0.5 * spec.g * np.exp(1j * spec.coupling_phase), -(2 * chi + nu), "coupling(D_f-2chi)"),
    ]
    drives = []
    for op, amp, freq, label in candidates:
        if amp == 0:
            continue
        if abs(freq) < 1e-9 * max(1.0, abs(chi)):
            m = amp * op
            static = static + m + m.conj().T
        elif include_sidebands or not odd:
            drives.append(DriveTerm(op, complex(amp), float(freq), label))
    return TimeDependentHamiltonian(OperatorMatrix(layout, static), tuple(drives))


def build_collapse_ops(
    spec: ModelSpec, displacement: tuple[complex, complex] | None = None
) -> list[tuple[float, OperatorMatrix]]:
    """Dissipation channels as ``(rate, L)``; the dissipator is rate * D[L]."""
    if spec.qubit_count == 4 or spec.has_filter:
        layout, a, f = two_mode_ladders(spec, displacement)
        out = []
        if spec.kappa_int > 0:
            out.append((spec.kappa_int, OperatorMatrix(layout, a)))
        if spec.kappa_f > 0:
            out.append((spec.kappa_f, OperatorMatrix(layout, f)))
        return out
    if spec.qubit_count == 2:
        layout = HilbertLayout(2, (spec.fock_dim_resonator,))
        a = embed(fock_destroy(spec.fock_dim_resonator), 2, layout)
    else:
        layout = HilbertLayout(0, (spec.fock_dim_resonator,))
        a = OperatorMatrix(layout, fock_destroy(spec.fock_dim_resonator))
    return [(spec.kappa, a)]


def build_hamiltonian(spec: ModelSpec) -> OperatorMatrix:
    """Static Hamiltonian for the resonator-only or two-qubit model."""
    if spec.qubit_count == 0:
        return build_kerr_resonator(spec)
    if spec.qubit_count == 2:
        return build_two_qubit_model(spec)
    raise ModelError("four-qubit models are built per block, see build_four_qubit_effective")
