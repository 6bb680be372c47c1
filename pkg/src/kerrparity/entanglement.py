"""Two-qubit concurrence of measurement-conditioned states."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .measurement import (
    ClassifierModel,
    valid_records,
    best_threshold,
    integrate_signal,
    write_csv,
)
from .operators import sigma_y

_YY = np.kron(sigma_y(), sigma_y())


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    """Matrix square root with round-off eigenvalues set to zero."""
    w, v = np.linalg.eigh(rho)
    w = np.where(w > 16 * np.finfo(float).eps * max(w[-1], 1.0), w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def concurrence(rho: np.ndarray, psd_tol: float = 1e-8) -> float:
    """Wootters concurrence max(0, l1 - l2 - l3 - l4) of a two-qubit density matrix.

    The ``l_i`` are the decreasing square roots of the eigenvalues of
    ``rho (Y x Y) rho* (Y x Y)``. They are computed as the singular values of
    ``sqrt(rho) sqrt(rho_tilde)``, which avoids taking square roots of
    round-off-sized eigenvalues.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("concurrence needs a 4x4 density matrix")
    rho = 0.5 * (rho + rho.conj().T)
    w = np.linalg.eigvalsh(rho)
    if w[0] < -psd_tol:
        raise ValueError(f"density matrix is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > 1e-6:
        raise ValueError("density matrix trace differs from 1")
    s = _psd_sqrt(rho)
    s_tilde = _YY @ s.conj() @ _YY
    lam = np.linalg.svd(s @ s_tilde, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def pure_state_concurrence(psi: np.ndarray) -> float:
    """|<psi| Y x Y |psi*>| for a normalized two-qubit pure state."""
    psi = np.asarray(psi, dtype=complex)
    return float(abs(psi @ _YY @ psi))


@dataclass
class ConcurrenceCurve:
    tau: np.ndarray
    c_even: np.ndarray
    c_odd: np.ndarray
    n_even: np.ndarray
    n_odd: np.ndarray

    COLUMNS = ("tau", "c_even", "c_odd", "n_even", "n_odd")

    def rows(self):
        return [
            (t, ce, co, int(ne), int(no))
            for t, ce, co, ne, no in zip(self.tau, self.c_even, self.c_odd, self.n_even, self.n_odd)
        ]

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.COLUMNS, self.rows())


def final_parity_labels(records) -> list[str]:
    """Parity each trajectory has collapsed to by its last checkpoint."""
    out = []
    for r in records:
        rho = r.rho_c[-1]
        p_odd = float(rho[1, 1].real + rho[2, 2].real)
        out.append("odd" if p_odd > 0.5 else "even")
    return out


def concurrence_curve(
    ensemble,
    tau_grid: Iterable[float],
    thresholds: dict[float, float] | Sequence[float] | None = None,
) -> ConcurrenceCurve:
    """Mean concurrence of rho_c at each tau, grouped by the parity decision at that tau.

    ``thresholds`` gives the classifier threshold for every tau (mapping or
    sequence aligned with ``tau_grid``). When omitted, every trajectory is
    labeled by the parity its conditioned state has collapsed to at the end
    of the record, and the threshold at each tau is optimized on those labels.
    """
    records = valid_records(ensemble)
    taus = [float(t) for t in tau_grid]
    if any(r.rho_c is None or r.rho_c.size == 0 for r in records):
        raise LookupError("records carry no conditioned-state checkpoints")
    if thresholds is None:
        labels = np.array(final_parity_labels(records))
    elif not isinstance(thresholds, dict):
        thresholds = dict(zip(taus, thresholds))

    rows = np.zeros((5, len(taus)))
    for i, tau in enumerate(taus):
        idx = [r.checkpoint_index(tau) for r in records]
        s = np.abs([integrate_signal(r, tau) for r in records])
        if thresholds is None:
            if (labels == "even").any() and (labels == "odd").any():
                thr, _ = best_threshold(s[labels == "even"], s[labels == "odd"])
            else:
                thr = float(s.max())
        else:
            thr = float(thresholds[tau])
        decision = ClassifierModel(thr).classify(s)
        conc = np.array([concurrence(r.rho_c[k]) for r, k in zip(records, idx)])
        ev, od = decision == "even", decision == "odd"
        rows[:, i] = (
            tau,
            conc[ev].mean() if ev.any() else np.nan,
            conc[od].mean() if od.any() else np.nan,
            ev.sum(),
            od.sum(),
        )
    return ConcurrenceCurve(*rows)
