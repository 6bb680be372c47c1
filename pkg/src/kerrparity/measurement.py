"""From homodyne records to parity decisions and measurement fidelity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

PARITIES = ("even", "odd")


def cumulative_signal(j_samples: np.ndarray, dt: float, kappa: float) -> np.ndarray:
    """Running integrated signal sqrt(kappa) * sum(j dt), starting at s(0) = 0."""
    j = np.asarray(j_samples, dtype=np.float64)
    out = np.empty(j.size + 1, dtype=np.float64)
    out[0] = 0.0
    np.cumsum(j * dt, out=out[1:])
    out[1:] *= math.sqrt(kappa)
    return out


@dataclass(eq=False)
class TrajectoryRecord:
    """Everything kept from one homodyne trajectory.

    ``j_samples[k]`` is the current sampled on ``[k dt, (k+1) dt)`` and
    ``s_of_tau[k]`` the integrated signal at ``t = k dt``. Checkpoint arrays
    share the ``checkpoint_times`` grid; ``rho_c`` holds the conditioned
    two-qubit state (resonator traced out) when the model has qubits.
    """

    index: int
    seed: int
    dt: float
    kappa: float
    j_samples: np.ndarray
    s_of_tau: np.ndarray | None = None
    checkpoint_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a_mean: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    n_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rho_c: np.ndarray | None = None
    true_parity: str | None = None
    initial_state: str = ""
    max_tail: float = 0.0
    valid: bool = True
    diagnostic: str = ""

    def __post_init__(self) -> None:
        self.j_samples = np.asarray(self.j_samples, dtype=np.float64)
        if self.s_of_tau is None:
            self.s_of_tau = cumulative_signal(self.j_samples, self.dt, self.kappa)
        if self.true_parity is not None and self.true_parity not in PARITIES:
            raise ValueError(f"true_parity must be one of {PARITIES}")

    @property
    def n_steps(self) -> int:
        return int(self.j_samples.size)

    @property
    def end_time(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def recomputed_signal(self) -> np.ndarray:
        return cumulative_signal(self.j_samples, self.dt, self.kappa)

    def checkpoint_index(self, tau: float, tol: float = 1e-9) -> int:
        if self.checkpoint_times.size == 0:
            raise LookupError("record has no checkpoints")
        i = int(np.argmin(np.abs(self.checkpoint_times - tau)))
        if abs(self.checkpoint_times[i] - tau) > tol + 1e-9 * abs(tau):
            raise LookupError(f"no checkpoint at tau={tau}")
        return i


def integrate_signal(record: TrajectoryRecord, tau: float) -> float:
    """Integrated signal s(tau), linearly interpolated between time steps."""
    if tau < 0 or tau > record.end_time * (1 + 1e-12) + 1e-12:
        raise ValueError(f"tau={tau} lies outside the record [0, {record.end_time}]")
    return float(np.interp(tau, record.times, record.s_of_tau))


def _signals(records: Sequence[TrajectoryRecord], tau: float) -> np.ndarray:
    return np.array([integrate_signal(r, tau) for r in records])


@dataclass(frozen=True)
class ClassifierModel:
    threshold: float
    tau: float | None = None
    training_fidelity: float | None = None

    def __post_init__(self) -> None:
        if not self.threshold >= 0:
            raise ValueError("threshold must be >= 0")

    def classify(self, s) -> np.ndarray:
        """``"odd"`` where |s| exceeds the threshold, ``"even"`` otherwise."""
        return np.where(np.abs(np.asarray(s)) > self.threshold, "odd", "even")


def _split_by_parity(records: Sequence[TrajectoryRecord]):
    even = [r for r in records if r.true_parity == "even"]
    odd = [r for r in records if r.true_parity == "odd"]
    return even, odd


def best_threshold(abs_even: np.ndarray, abs_odd: np.ndarray) -> tuple[float, float]:
    """Threshold maximizing balanced accuracy; ties go to the larger threshold."""
    e = np.sort(np.asarray(abs_even, dtype=float))
    o = np.sort(np.asarray(abs_odd, dtype=float))
    if e.size == 0 or o.size == 0:
        raise ValueError("training set must contain both parities")
    values = np.unique(np.concatenate([e, o]))
    cands = [values[0] / 2.0] if values[0] > 0 else [0.0]
    cands.extend(0.5 * (values[:-1] + values[1:]))
    cands.append(values[-1])
    cands = np.asarray(cands)
    p_ee = np.searchsorted(e, cands, side="right") / e.size
    p_oo = 1.0 - np.searchsorted(o, cands, side="right") / o.size
    fid = 0.5 * (p_ee + p_oo)
    best = np.flatnonzero(fid == fid.max())[-1]
    return float(cands[best]), float(fid[best])


def optimize_threshold(training: Sequence[TrajectoryRecord], tau: float) -> ClassifierModel:
    even, odd = _split_by_parity(training)
    if not even or not odd:
        raise ValueError("training set must contain both parities")
    thr, fid = best_threshold(np.abs(_signals(even, tau)), np.abs(_signals(odd, tau)))
    return ClassifierModel(thr, tau, fid)


def wilson_interval(p: float, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("need at least one sample")
    z = norm.ppf(0.5 + confidence / 2.0)
    denom = 1.0 + z**2 / n
    centre = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class FidelityEstimate:
    f_m: float
    ci_lo: float
    ci_hi: float
    n_even: int
    n_odd: int


def measurement_fidelity(
    test: Sequence[TrajectoryRecord], model: ClassifierModel, tau: float
) -> FidelityEstimate:
    """Balanced accuracy 1/2[P(e|e) + P(o|o)] with a Wilson 95% interval.

    The interval treats the balanced accuracy as a binomial proportion over
    all test records, which is exact when both classes have equal size.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    even, odd = _split_by_parity(test)
    if not even or not odd:
        raise ValueError("test set must contain both parities")
    p_ee = float(np.mean(model.classify(_signals(even, tau)) == "even"))
    p_oo = float(np.mean(model.classify(_signals(odd, tau)) == "odd"))
    f = 0.5 * (p_ee + p_oo)
    lo, hi = wilson_interval(f, len(even) + len(odd))
    return FidelityEstimate(f, lo, hi, len(even), len(odd))


def split_train_test(records: Sequence[TrajectoryRecord]):
    """Disjoint halves: alternate records of each parity, ordered by seed index."""
    train, test = [], []
    for group in _split_by_parity(records):
        for k, r in enumerate(sorted(group, key=lambda r: r.index)):
            (train if k % 2 == 0 else test).append(r)
    return train, test


@dataclass
class FidelityCurve:
    tau: np.ndarray
    f_m: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    threshold: np.ndarray

    COLUMNS = ("tau", "f_m", "ci_lo", "ci_hi")

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.tau, self.f_m, self.ci_lo, self.ci_hi))

    def to_csv(self, path: str | Path) -> None:
        write_csv(path, self.COLUMNS, self.rows())

    def at(self, tau: float) -> float:
        return float(self.f_m[int(np.argmin(np.abs(self.tau - tau)))])


def valid_records(ensemble) -> list[TrajectoryRecord]:
    records = getattr(ensemble, "records", ensemble)
    return [r for r in records if r.valid]


def fidelity_curve(
    ensemble, tau_grid: Iterable[float], held_out: bool = True
) -> FidelityCurve:
    """Measurement fidelity versus integration time, re-optimizing the threshold at every tau.

    With ``held_out`` the threshold is trained on one half of the records and
    the fidelity is evaluated on the other (disjoint seeds); otherwise both
    use all records.
    """
    records = valid_records(ensemble)
    train, test = split_train_test(records) if held_out else (records, records)
    taus = np.asarray(list(tau_grid), dtype=float)
    cols = np.zeros((5, taus.size))
    for i, tau in enumerate(taus):
        model = optimize_threshold(train, tau)
        est = measurement_fidelity(test, model, tau)
        cols[:, i] = (tau, est.f_m, est.ci_lo, est.ci_hi, model.threshold)
    return FidelityCurve(*cols)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}
