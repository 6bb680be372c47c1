"""Dense operator kernel over qubit registers and truncated Fock spaces.

Subsystem ordering is fixed: qubits first (ascending index), then bosonic
modes (ascending index). Composite bases are Kronecker products in that
order, and the single-qubit basis is (|0>, |1>) with sigma_z = diag(1, -1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class LayoutError(ValueError):
    """Raised when operators, states and layouts do not fit together."""


@dataclass(frozen=True)
class HilbertLayout:
    qubit_count: int = 0
    fock_dims: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "fock_dims", tuple(int(d) for d in self.fock_dims))
        if self.qubit_count < 0:
            raise LayoutError("qubit_count must be >= 0")
        if any(d < 2 for d in self.fock_dims):
            raise LayoutError(f"Fock dimensions must be >= 2, got {self.fock_dims}")
        if self.qubit_count == 0 and not self.fock_dims:
            raise LayoutError("layout has no subsystems")

    @property
    def dims(self) -> tuple[int, ...]:
        """Local dimension of every subsystem, in canonical order."""
        return (2,) * self.qubit_count + self.fock_dims

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_subsystems(self) -> int:
        return self.qubit_count + len(self.fock_dims)

    def mode_slot(self, mode: int) -> int:
        """Subsystem index of bosonic mode ``mode``."""
        if not 0 <= mode < len(self.fock_dims):
            raise LayoutError(f"mode {mode} out of range")
        return self.qubit_count + mode

    def sublayout(self, keep: Iterable[int]) -> "HilbertLayout":
        keep = sorted(set(keep))
        qubits = sum(1 for s in keep if s < self.qubit_count)
        modes = tuple(self.dims[s] for s in keep if s >= self.qubit_count)
        return HilbertLayout(qubits, modes)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    layout: HilbertLayout
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.layout.dim, self.layout.dim):
            raise LayoutError(
                f"operator shape {m.shape} does not match layout dimension {self.layout.dim}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.layout, self.matrix.conj().T)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T), initial=0.0) < atol)

    def _check(self, other: "OperatorMatrix") -> None:
        if other.layout != self.layout:
            raise LayoutError("layout mismatch")

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check(other)
        return OperatorMatrix(self.layout, self.matrix @ other.matrix)

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check(other)
        return OperatorMatrix(self.layout, self.matrix + other.matrix)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        self._check(other)
        return OperatorMatrix(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "OperatorMatrix":
        return OperatorMatrix(self.layout, self.matrix * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "OperatorMatrix":
        return OperatorMatrix(self.layout, -self.matrix)


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure state vector (1-d ``data``) or density matrix (2-d ``data``)."""

    layout: HilbertLayout
    data: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=complex)
        n = self.layout.dim
        if d.shape not in ((n,), (n, n)):
            raise LayoutError(f"state shape {d.shape} does not match layout dimension {n}")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> "QuantumState":
        if not self.is_pure:
            return self
        return QuantumState(self.layout, np.outer(self.data, self.data.conj()))

    def norm(self) -> float:
        if self.is_pure:
            return float(np.linalg.norm(self.data))
        return float(np.trace(self.data).real)

    def purity(self) -> float:
        if self.is_pure:
            return 1.0
        return float(np.vdot(self.data, self.data).real)

    def validate(self, atol: float = 1e-9, psd_tol: float = 1e-8) -> None:
        """Raise ``ValueError`` if normalization, hermiticity or positivity fail."""
        if self.is_pure:
            if abs(np.linalg.norm(self.data) - 1.0) > atol:
                raise ValueError("state vector is not normalized")
            return
        rho = self.data
        if abs(np.trace(rho).real - 1.0) > atol:
            raise ValueError("density matrix trace differs from 1")
        if np.max(np.abs(rho - rho.conj().T)) > atol:
            raise ValueError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0] < -psd_tol:
            raise ValueError("density matrix has negative eigenvalues")


def fock_destroy(dim: int) -> np.ndarray:
    """Truncated annihilation operator with sqrt(n) on the first superdiagonal."""
    if int(dim) != dim or dim < 2:
        raise LayoutError(f"Fock dimension must be an integer >= 2, got {dim}")
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def fock_number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def sigma_z() -> np.ndarray:
    return np.diag([1.0, -1.0]).astype(complex)


def sigma_x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def sigma_y() -> np.ndarray:
    return np.array([[0, -1j], [1j, 0]], dtype=complex)


def parity_operator(dim: int) -> np.ndarray:
    """Photon-number parity exp(i pi a^dag a) on a truncated mode."""
    return np.diag((-1.0) ** np.arange(dim)).astype(complex)


def embed(op, slot: int, layout: HilbertLayout) -> OperatorMatrix:
    """Lift a single-subsystem operator to the full space as I x .. x op x .. x I."""
    local = np.asarray(op.matrix if isinstance(op, OperatorMatrix) else op, dtype=complex)
    dims = layout.dims
    if not 0 <= slot < len(dims):
        raise LayoutError(f"slot {slot} out of range for {len(dims)} subsystems")
    if local.shape != (dims[slot], dims[slot]):
        raise LayoutError(
            f"operator of shape {local.shape} does not fit slot {slot} of dimension {dims[slot]}"
        )
    left = int(np.prod(dims[:slot]))
    right = int(np.prod(dims[slot + 1:]))
    full = np.kron(np.kron(np.eye(left), local), np.eye(right))
    return OperatorMatrix(layout, full)


def identity(layout: HilbertLayout) -> OperatorMatrix:
    return OperatorMatrix(layout, np.eye(layout.dim, dtype=complex))


def tensor_states(*factors: np.ndarray) -> np.ndarray:
    """Kronecker product of state vectors, in the order given."""
    out = np.ones(1, dtype=complex)
    for f in factors:
        out = np.kron(out, np.asarray(f, dtype=complex))
    return out


def fock_state(dim: int, n: int = 0) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def coherent_state(dim: int, alpha: complex) -> np.ndarray:
    """Coherent state from its Fock series, renormalized on the truncated space."""
    n = np.arange(dim)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        return fock_state(dim, 0)
    amp = np.exp(n * np.log(complex(alpha)) - 0.5 * log_fact - 0.5 * abs(alpha) ** 2)
    return amp / np.linalg.norm(amp)


def qubit_register_state(amplitudes: dict[str, complex], qubit_count: int) -> np.ndarray:
    """State of a qubit register from computational-basis labels like ``{"01": 1, "10": 1}``."""
    v = np.zeros(2**qubit_count, dtype=complex)
    for label, amp in amplitudes.items():
        if len(label) != qubit_count or set(label) - {"0", "1"}:
            raise LayoutError(f"bad basis label {label!r}")
        v[int(label, 2)] += amp
    return v / np.linalg.norm(v)


def partial_trace(state: QuantumState, keep: Iterable[int]) -> QuantumState:
    """Reduced density matrix on the subsystems listed in ``keep``."""
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise LayoutError("keep set must be nonempty")
    dims = state.layout.dims
    if any(not 0 <= k < len(dims) for k in keep):
        raise LayoutError(f"invalid subsystem index in {keep}")
    rest = [k for k in range(len(dims)) if k not in keep]
    dk = int(np.prod([dims[k] for k in keep]))
    dr = int(np.prod([dims[k] for k in rest])) if rest else 1
    sub = state.layout.sublayout(keep)

    if state.is_pure:
        psi = state.data.reshape(dims).transpose(keep + rest).reshape(dk, dr)
        return QuantumState(sub, psi @ psi.conj().T)

    n = len(dims)
    rho = state.data.reshape(dims + dims)
    perm = keep + rest + [n + k for k in keep] + [n + k for k in rest]
    rho = rho.transpose(perm).reshape(dk, dr, dk, dr)
    return QuantumState(sub, np.einsum("ajbj->ab", rho))


def expectation(state: QuantumState, op: OperatorMatrix) -> complex:
    if state.layout != op.layout:
        raise LayoutError("state and operator layouts differ")
    if state.is_pure:
        return complex(np.vdot(state.data, op.matrix @ state.data))
    return complex(np.einsum("ij,ji->", op.matrix, state.data))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m), initial=0.0))


def top_level_population(state: QuantumState, levels: int = 2) -> list[float]:
    """Population in the top ``levels`` Fock levels of every bosonic mode."""
    out = []
    for mode in range(len(state.layout.fock_dims)):
        slot = state.layout.mode_slot(mode)
        rho = partial_trace(state, [slot]).data
        out.append(float(np.real(np.trace(rho[-levels:, -levels:]))))
    return out


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out
