"""Trajectory ensembles: configuration, execution, persistence and aggregates.

Record files
------------
Each trajectory is stored as ``records/traj_<index>.bin``::

    b"KPTR"                      magic
    uint32 (little endian)       length H of the header
    H bytes                      UTF-8 JSON header (sorted keys)
    raw arrays                   little-endian, in header["arrays"] order

The header holds the scalar fields of :class:`TrajectoryRecord` plus
``arrays = [[name, dtype, shape], ...]``. Dtypes are ``<f8`` or ``<c16``.
Floats in the header are written with full round-trip precision, so
``load(save(record))`` reproduces every field exactly.

Alongside the records, ``manifest.json`` stores the run configuration and its
hash, and the aggregates are written as CSV (``photon_number.csv``,
``fidelity.csv`` and ``concurrence.csv`` when the run allows them).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analytics import pointer_phase
from .entanglement import ConcurrenceCurve, concurrence_curve
from .integrators import HomodyneSSE, IntegratorBlowup, IntegratorConfig, WienerStream, derive_seed
from .measurement import (
    FidelityCurve,
    TrajectoryRecord,
    fidelity_curve,
    read_csv,
    valid_records,
    write_csv,
)
from .model import ModelError, ModelSpec, PRESETS, build_hamiltonian, qubit_blocks
from .operators import fock_destroy

MAGIC = b"KPTR"


class ConfigError(ValueError):
    """Invalid run configuration."""


class RecordFormatError(ValueError):
    """A record file is truncated, has a bad header or does not match its manifest."""


_BELL = 1 / math.sqrt(2)
NAMED_STATES: dict[str, tuple[dict[str, complex], str | None]] = {
    "odd-bell": ({"01": _BELL, "10": _BELL}, "odd"),
    "even-bell": ({"00": _BELL, "11": _BELL}, "even"),
    "plus-plus-vacuum": ({"00": 0.5, "01": 0.5, "10": 0.5, "11": 0.5}, None),
    **{b: ({b: 1.0}, "odd" if b.count("1") % 2 else "even") for b in ("00", "01", "10", "11")},
}


def initial_amplitudes(name: str, qubit_count: int) -> tuple[np.ndarray, str | None]:
    """Qubit-register amplitudes (length ``2**qubit_count``) and the true parity of a named state.

    The resonator always starts in vacuum. ``"vacuum"`` is the only state of
    the resonator-only model.
    """
    if qubit_count == 0:
        if name != "vacuum":
            raise ConfigError(f"resonator-only runs start from 'vacuum', not {name!r}")
        return np.ones(1, dtype=complex), None
    if qubit_count != 2:
        raise ConfigError("trajectory ensembles support 0 or 2 qubits")
    if name not in NAMED_STATES:
        raise ConfigError(f"unknown initial state {name!r}; known: {sorted(NAMED_STATES)}")
    amps, parity = NAMED_STATES[name]
    out = np.zeros(4, dtype=complex)
    for label, c in amps.items():
        out[int(label, 2)] = c
    return out, parity


@dataclass(frozen=True)
class RunConfig:
    """A trajectory ensemble. Rates are in units of kappa, times in units of 1/kappa.

    ``trajectories`` is the count per entry of ``initial_states``.
    ``homodyne_phase`` defaults to the pointer-state phase of the model.
    ``threads`` and ``output_dir`` never change the results.
    """

    model: ModelSpec = field(default_factory=lambda: PRESETS["figure-params"])
    integrator: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(dt=2e-4))
    trajectories: int = 100
    initial_states: tuple[str, ...] = ("even-bell", "odd-bell")
    tau_max: float = 5.0
    checkpoint_cadence: float = 0.05
    master_seed: int = 0
    batch_size: int = 100
    threads: int = 1
    homodyne_phase: float | None = None
    tail_tolerance: float = 1e-6
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.initial_states, str):
            object.__setattr__(self, "initial_states", (self.initial_states,))
        object.__setattr__(self, "initial_states", tuple(self.initial_states))
        if self.trajectories < 0:
            raise ConfigError("trajectories must be >= 0")
        if self.batch_size < 1 or self.threads < 1:
            raise ConfigError("batch_size and threads must be >= 1")
        if not self.tau_max > 0 or not self.checkpoint_cadence > 0:
            raise ConfigError("tau_max and checkpoint_cadence must be > 0")
        for name, span in (("tau_max", self.tau_max), ("checkpoint_cadence", self.checkpoint_cadence)):
            steps = span / self.integrator.dt
            if abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
                raise ConfigError(f"{name} must be a whole number of time steps")
        if self.checkpoint_steps == 0 or self.n_steps % self.checkpoint_steps:
            raise ConfigError("tau_max must be a whole number of checkpoint intervals")
        if self.model.qubit_count == 4:
            raise ConfigError("four-qubit models are analysed per block, not by trajectory ensembles")
        for name in self.initial_states:
            initial_amplitudes(name, self.model.qubit_count)

    @property
    def n_steps(self) -> int:
        return int(round(self.tau_max / self.integrator.dt))

    @property
    def checkpoint_steps(self) -> int:
        return int(round(self.checkpoint_cadence / self.integrator.dt))

    @property
    def measured_phase(self) -> float:
        return pointer_phase(self.model) if self.homodyne_phase is None else self.homodyne_phase

    def to_dict(self) -> dict:
        d = asdict(self)
        d["initial_states"] = list(self.initial_states)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        preset = data.pop("preset", None)
        model = data.pop("model", {}) or {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
            base = PRESETS[preset].to_dict()
        else:
            base = {}
        try:
            spec = ModelSpec.from_dict({**base, **model})
            integ = IntegratorConfig(**data.pop("integrator", {}))
        except (TypeError, ModelError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        known = set(cls.__dataclass_fields__) - {"model", "integrator"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(model=spec, integrator=integ, **data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def hash(self) -> str:
        """SHA-256 of every field that influences the results."""
        d = self.to_dict()
        d.pop("threads")
        d.pop("output_dir")
        d["measured_phase"] = self.measured_phase
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


@dataclass
class PhotonCurve:
    tau: np.ndarray
    means: dict[str, np.ndarray]
    sems: dict[str, np.ndarray]

    @property
    def columns(self) -> list[str]:
        cols = ["tau"]
        for name in self.means:
            cols += [f"n_mean[{name}]", f"n_sem[{name}]"]
        return cols

    def to_csv(self, path: str | Path) -> None:
        rows = []
        for i, t in enumerate(self.tau):
            row = [t]
            for name in self.means:
                row += [self.means[name][i], self.sems[name][i]]
            rows.append(row)
        write_csv(path, self.columns, rows)


def photon_number_curve(records: Sequence[TrajectoryRecord]) -> PhotonCurve:
    """Ensemble mean and standard error of <a+a> at the checkpoints, per initial state."""
    records = valid_records(records)
    groups: dict[str, list[TrajectoryRecord]] = {}
    for r in records:
        groups.setdefault(r.initial_state, []).append(r)
    tau = records[0].checkpoint_times if records else np.zeros(0)
    means, sems = {}, {}
    for name in sorted(groups):
        n = np.array([r.n_mean for r in groups[name]])
        means[name] = n.mean(axis=0)
        sems[name] = n.std(axis=0, ddof=1) / math.sqrt(len(n)) if len(n) > 1 else np.full(n.shape[1], np.nan)
    return PhotonCurve(tau, means, sems)


@dataclass
class EnsembleResult:
    config: RunConfig
    config_hash: str
    code_version: str
    records: list[TrajectoryRecord]
    aggregates: dict[str, object] = field(default_factory=dict)

    @property
    def valid(self) -> list[TrajectoryRecord]:
        return valid_records(self.records)

    def by_initial_state(self, name: str) -> list[TrajectoryRecord]:
        return [r for r in self.records if r.initial_state == name]

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "n_records": len(self.records),
            "n_valid": len(self.valid),
            "invalid": {str(r.index): r.diagnostic for r in self.records if not r.valid},
            "record_files": [record_filename(r.index) for r in self.records],
            "aggregates": sorted(self.aggregates),
        }


def record_filename(index: int) -> str:
    return f"traj_{index:06d}.bin"


def _checkpoint_data(psi: np.ndarray, a_op, n_diag: np.ndarray, tail_mask: np.ndarray, nq: int, block_ids):
    """Mean field, photon number, tail weight and qubit state for every trajectory in a batch."""
    a_psi = a_op @ psi.transpose(1, 0, 2).reshape(psi.shape[1], -1)
    a_psi = a_psi.reshape(psi.shape[1], psi.shape[0], psi.shape[2]).transpose(1, 0, 2)
    a_mean = np.einsum("bnk,bnk->k", psi.conj(), a_psi)
    pops = np.abs(psi) ** 2
    n_mean = np.einsum("n,bnk->k", n_diag, pops)
    tail = np.einsum("n,bnk->k", tail_mask, pops)
    rho = None
    if nq > 1:
        rho = np.zeros((psi.shape[2], nq, nq), dtype=complex)
        sub = np.einsum("ink,jnk->kij", psi, psi.conj())
        rho[:, block_ids[:, None], block_ids[None, :]] = sub
    return a_mean, n_mean, tail, rho


def _simulate_batch(cfg: RunConfig, state_name: str, indices: Sequence[int], kernels) -> list[TrajectoryRecord]:
    spec, icfg = cfg.model, cfg.integrator
    amps, parity = initial_amplitudes(state_name, spec.qubit_count)
    keep = np.flatnonzero(np.abs(amps) > 0)
    sse, a_op, n_diag, tail_mask = kernels(tuple(keep))
    N = spec.fock_dim_resonator
    B = len(indices)
    seeds = [derive_seed(cfg.master_seed, i) for i in indices]
    dW = np.stack([WienerStream(s, icfg.dt).draw(cfg.n_steps) for s in seeds], axis=1) if B else None

    psi = np.zeros((len(keep), N, B), dtype=complex)
    psi[:, 0, :] = amps[keep][:, None]
    n_cp = cfg.n_steps // cfg.checkpoint_steps + 1
    nq = amps.size
    a_mean = np.zeros((B, n_cp), dtype=complex)
    n_mean = np.zeros((B, n_cp))
    max_tail = np.zeros(B)
    rho_c = np.zeros((B, n_cp, nq, nq), dtype=complex) if nq > 1 else None
    j = np.zeros((B, cfg.n_steps))

    def checkpoint(c):
        am, nm, tail, rho = _checkpoint_data(psi, a_op, n_diag, tail_mask, nq, keep)
        a_mean[:, c], n_mean[:, c] = am, nm
        np.maximum(max_tail, tail, out=max_tail)
        if rho_c is not None:
            rho_c[:, c] = rho

    checkpoint(0)
    for k in range(cfg.n_steps):
        psi, X = sse.step(psi, dW[k], k * icfg.dt)
        j[:, k] = X + dW[k] / icfg.dt
        if (k + 1) % cfg.checkpoint_steps == 0:
            checkpoint((k + 1) // cfg.checkpoint_steps)

    times = np.arange(n_cp) * cfg.checkpoint_cadence
    out = []
    for b, (idx, seed) in enumerate(zip(indices, seeds)):
        ok = bool(max_tail[b] <= cfg.tail_tolerance)
        diag = "" if ok else f"Fock truncation tail reached {max_tail[b]:.3e} > {cfg.tail_tolerance:.1e}"
        out.append(
            TrajectoryRecord(
                index=idx, seed=seed, dt=icfg.dt, kappa=spec.kappa, j_samples=j[b],
                checkpoint_times=times, a_mean=a_mean[b], n_mean=n_mean[b],
                rho_c=None if rho_c is None else rho_c[b], true_parity=parity,
                initial_state=state_name, max_tail=float(max_tail[b]), valid=ok, diagnostic=diag,
            )
        )
    return out


def _run_batch(cfg, state_name, indices, kernels):
    try:
        return _simulate_batch(cfg, state_name, indices, kernels)
    except IntegratorBlowup as exc:
        if len(indices) > 1:
            return [r for i in indices for r in _run_batch(cfg, state_name, [i], kernels)]
        (idx,) = indices
        return [
            TrajectoryRecord(
                index=idx, seed=derive_seed(cfg.master_seed, idx), dt=cfg.integrator.dt,
                kappa=cfg.model.kappa, j_samples=np.zeros(0), initial_state=state_name,
                true_parity=initial_amplitudes(state_name, cfg.model.qubit_count)[1],
                valid=False, diagnostic=f"integrator blow-up: {exc}",
            )
        ]


class _Kernels:
    """Per-block SSE kernels, built once per distinct set of populated blocks."""

    def __init__(self, cfg: RunConfig):
        spec = cfg.model
        N = spec.fock_dim_resonator
        H = build_hamiltonian(spec)
        self.H_blocks = qubit_blocks(H) if spec.qubit_count else H.matrix[None]
        a = fock_destroy(N)
        self.a = a
        self.M = math.sqrt(spec.kappa) * a * np.exp(-1j * cfg.measured_phase)
        self.n_diag = np.arange(N, dtype=float)
        self.tail_mask = (np.arange(N) >= N - 2).astype(float)
        self.cfg = cfg
        self._cache: dict[tuple[int, ...], HomodyneSSE] = {}

    def __call__(self, keep: tuple[int, ...]):
        if keep not in self._cache:
            Hb = self.H_blocks[list(keep)]
            Mb = np.broadcast_to(self.M, Hb.shape)
            self._cache[keep] = HomodyneSSE(Hb, Mb, self.cfg.integrator)
        return self._cache[keep], self.a, self.n_diag, self.tail_mask


def run_ensemble(cfg: RunConfig, write: bool = True) -> EnsembleResult:
    """Run every trajectory of ``cfg`` and compute the aggregates.

    Trajectory ``i`` (numbered across initial states in order) draws its
    noise from a Philox stream keyed by ``derive_seed(master_seed, i)``, and
    batches have a fixed composition, so results do not depend on
    ``threads``. Trajectories whose Fock tail exceeds ``tail_tolerance`` are
    kept with ``valid=False`` and a diagnostic, and excluded from aggregates.
    """
    if cfg.integrator.measured_channel_phase != 0.0:
        raise ConfigError("set the homodyne angle through RunConfig.homodyne_phase")
    kernels = _Kernels(cfg)
    jobs = []
    for s, name in enumerate(cfg.initial_states):
        base = s * cfg.trajectories
        for start in range(0, cfg.trajectories, cfg.batch_size):
            stop = min(start + cfg.batch_size, cfg.trajectories)
            jobs.append((name, list(range(base + start, base + stop))))
    for name, _ in jobs:
        kernels(tuple(np.flatnonzero(np.abs(initial_amplitudes(name, cfg.model.qubit_count)[0]) > 0)))

    if cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            batches = list(pool.map(lambda job: _run_batch(cfg, job[0], job[1], kernels), jobs))
    else:
        batches = [_run_batch(cfg, name, idx, kernels) for name, idx in jobs]
    records = sorted((r for b in batches for r in b), key=lambda r: r.index)

    result = EnsembleResult(cfg, cfg.hash(), __version__, records)
    result.aggregates = compute_aggregates(result)
    if write and cfg.output_dir is not None:
        save_ensemble(result, cfg.output_dir)
    return result


def compute_aggregates(result: EnsembleResult) -> dict[str, object]:
    records = result.valid
    if not records:
        return {}
    tau = records[0].checkpoint_times
    out: dict[str, object] = {"photon_number": photon_number_curve(records)}
    labeled = [r for r in records if r.true_parity is not None]
    parities = {r.true_parity for r in labeled}
    if parities == {"even", "odd"} and min(
        sum(r.true_parity == p for r in labeled) for p in parities
    ) >= 2:
        out["fidelity"] = fidelity_curve(labeled, tau)
    mixed = [r for r in records if r.true_parity is None and r.rho_c is not None]
    if mixed:
        out["concurrence"] = concurrence_curve(mixed, tau)
    return out


# -- persistence -------------------------------------------------------------

_ARRAY_FIELDS = ("j_samples", "s_of_tau", "checkpoint_times", "a_mean", "n_mean", "rho_c")
_SCALAR_FIELDS = ("index", "seed", "dt", "kappa", "true_parity", "initial_state", "max_tail", "valid", "diagnostic")


def encode_record(record: TrajectoryRecord) -> bytes:
    arrays = []
    blobs = []
    for name in _ARRAY_FIELDS:
        value = getattr(record, name)
        if value is None:
            continue
        arr = np.asarray(value)
        dtype = "<c16" if np.iscomplexobj(arr) else "<f8"
        arr = np.ascontiguousarray(arr, dtype=dtype)
        arrays.append([name, dtype, list(arr.shape)])
        blobs.append(arr.tobytes())
    header = {name: getattr(record, name) for name in _SCALAR_FIELDS}
    header.update(
        index=int(record.index), seed=int(record.seed), dt=float(record.dt), kappa=float(record.kappa),
        max_tail=float(record.max_tail), valid=bool(record.valid),
    )
    header["arrays"] = arrays
    hbytes = json.dumps(header, sort_keys=True).encode()
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(blobs)


def decode_record(data: bytes) -> TrajectoryRecord:
    if len(data) < 8 or data[:4] != MAGIC:
        raise RecordFormatError("not a trajectory record (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RecordFormatError(f"corrupt record header: {exc}") from exc
    pos = 8 + hlen
    fields = {name: header[name] for name in _SCALAR_FIELDS}
    for name, dtype, shape in header["arrays"]:
        n = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if pos + n > len(data):
            raise RecordFormatError(f"record truncated in array {name!r}")
        fields[name] = np.frombuffer(data[pos : pos + n], dtype=dtype).reshape(shape).copy()
        pos += n
    if pos != len(data):
        raise RecordFormatError("trailing bytes after the last array")
    return TrajectoryRecord(**fields)


def save_record(record: TrajectoryRecord, path: str | Path) -> None:
    Path(path).write_bytes(encode_record(record))


def load_record(path: str | Path) -> TrajectoryRecord:
    return decode_record(Path(path).read_bytes())


def save_ensemble(result: EnsembleResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    for r in result.records:
        save_record(r, out / "records" / record_filename(r.index))
    for name, table in result.aggregates.items():
        table.to_csv(out / f"{name}.csv")
    (out / "manifest.json").write_text(json.dumps(result.metadata(), sort_keys=True, indent=2) + "\n")
    return out


def load_ensemble(out_dir: str | Path, spot_check: bool = True) -> EnsembleResult:
    """Load a saved ensemble; with ``spot_check`` verify it against its own manifest.

    The check recomputes every integrated signal from the raw currents, the
    config hash from the stored config, and a few rows of each stored
    aggregate from the records.
    """
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    cfg = RunConfig.from_dict(manifest["config"])
    records = [load_record(out / "records" / name) for name in manifest["record_files"]]
    result = EnsembleResult(cfg, manifest["config_hash"], manifest["code_version"], records)
    stored = {name: read_csv(out / f"{name}.csv") for name in manifest["aggregates"]}
    if spot_check:
        if cfg.hash() != manifest["config_hash"]:
            raise RecordFormatError("config hash does not match the stored configuration")
        for r in records:
            if r.valid and not np.array_equal(r.recomputed_signal(), r.s_of_tau):
                raise RecordFormatError(f"record {r.index}: stored signal differs from its currents")
        _spot_check_aggregates(result, stored)
    result.aggregates = compute_aggregates(result) if records else {}
    return result


def _spot_check_aggregates(result: EnsembleResult, stored: dict[str, dict[str, np.ndarray]]) -> None:
    records = result.valid
    for name, table in stored.items():
        tau = table["tau"]
        rows = sorted({0, len(tau) // 2, len(tau) - 1})
        if name == "fidelity":
            labeled = [r for r in records if r.true_parity is not None]
            fresh = fidelity_curve(labeled, tau[rows])
            got = {"f_m": fresh.f_m, "ci_lo": fresh.ci_lo, "ci_hi": fresh.ci_hi}
        elif name == "concurrence":
            mixed = [r for r in records if r.true_parity is None]
            fresh = concurrence_curve(mixed, tau[rows])
            got = {"c_even": fresh.c_even, "c_odd": fresh.c_odd}
        elif name == "photon_number":
            fresh = photon_number_curve(records)
            got = {f"n_mean[{k}]": v[rows] for k, v in fresh.means.items()}
        else:
            continue
        for col, values in got.items():
            if not np.allclose(values, table[col][rows], rtol=1e-12, atol=1e-12, equal_nan=True):
                raise RecordFormatError(f"aggregate {name}.{col} does not match the records")


__all__ = [
    "ConcurrenceCurve",
    "ConfigError",
    "EnsembleResult",
    "FidelityCurve",
    "NAMED_STATES",
    "PhotonCurve",
    "RecordFormatError",
    "RunConfig",
    "compute_aggregates",
    "decode_record",
    "encode_record",
    "initial_amplitudes",
    "load_ensemble",
    "load_record",
    "photon_number_curve",
    "run_ensemble",
    "save_ensemble",
    "save_record",
]
