"""Fast invariant checks on small instances, run by ``kerrparity validate``."""

from __future__ import annotations

import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np

from .analytics import classical_eom_rhs, dephasing_rate_numeric, steady_state
from .entanglement import concurrence, pure_state_concurrence
from .integrators import HomodyneSSE, IntegratorConfig, WienerStream, lindblad_step
from .measurement import TrajectoryRecord
from .model import ModelSpec, build_collapse_ops, build_kerr_resonator, build_two_qubit_model
from .operators import (
    HilbertLayout,
    OperatorMatrix,
    QuantumState,
    coherent_state,
    embed,
    fock_destroy,
    partial_trace,
    random_state,
    sigma_z,
    tensor_states,
)

Check = Callable[[], tuple[bool, str]]


def _ladder_commutator() -> tuple[bool, str]:
    a = fock_destroy(10)
    c = a @ a.conj().T - a.conj().T @ a
    dev = np.abs(c[:9, :9] - np.eye(9)).max()
    return dev < 1e-12 and abs(c[9, 9] + 9) < 1e-12, f"max deviation below the top level {dev:.1e}"


def _qnd_structure() -> tuple[bool, str]:
    spec = ModelSpec(fock_dim_resonator=10)
    H = build_two_qubit_model(spec)
    worst = max(
        np.abs(H.matrix @ embed(sigma_z(), q, H.layout).matrix - embed(sigma_z(), q, H.layout).matrix @ H.matrix).max()
        for q in (0, 1)
    )
    return worst < 1e-12 and H.is_hermitian(), f"max |[H, sigma_z]| = {worst:.1e}"


def _fixed_point() -> tuple[bool, str]:
    worst = 0.0
    for eps in np.linspace(0.6, 5.0, 10):
        for K in np.linspace(0.05, 1.0, 10):
            spec = ModelSpec(eps_p=float(eps), K=float(K))
            p = steady_state(spec)
            x, y = p.alpha_mag * math.cos(p.theta_o), p.alpha_mag * math.sin(p.theta_o)
            worst = max(worst, *map(abs, classical_eom_rhs(x, y, spec)))
    return worst < 1e-10, f"max residual {worst:.1e}"


def _concurrence_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        psi = random_state(4, rng)
        worst = max(worst, abs(concurrence(np.outer(psi, psi.conj())) - pure_state_concurrence(psi)))
    return worst < 1e-10, f"max Wootters vs pure-state difference {worst:.1e}"


def _coherent_partial_trace() -> tuple[bool, str]:
    N, alpha = 60, 3.0
    layout = HilbertLayout(2, (N,))
    q01 = np.array([0, 1, 0, 0], dtype=complex)
    q10 = np.array([0, 0, 1, 0], dtype=complex)
    psi = (tensor_states(q01, coherent_state(N, alpha)) + tensor_states(q10, coherent_state(N, -alpha))) / math.sqrt(2)
    rho = partial_trace(QuantumState(layout, psi), [0, 1]).data
    want = math.exp(-2 * alpha**2) / 2
    err = abs(abs(rho[1, 2]) - want)
    return err < 1e-12, f"|rho_01,10| error {err:.1e}"


def _sse_purity() -> tuple[bool, str]:
    spec = ModelSpec(qubit_count=0, fock_dim_resonator=12, eps_p=1.0, K=0.5)
    H = build_kerr_resonator(spec).matrix
    M = fock_destroy(12)
    sse = HomodyneSSE(H[None], M[None], IntegratorConfig(dt=1e-3, scheme="euler-maruyama"))
    psi = np.zeros((1, 12, 8), dtype=complex)
    psi[0, 0] = 1.0
    stream = np.random.default_rng(3)
    worst = 0.0
    for k in range(500):
        psi, _ = sse.step(psi, stream.normal(0, math.sqrt(1e-3), 8))
        worst = max(worst, np.abs(np.einsum("bnk,bnk->k", psi.conj(), psi).real - 1).max())
    return worst < 1e-6, f"max norm deviation {worst:.1e}"


def _wiener_moments() -> tuple[bool, str]:
    dt = 1e-3
    x = WienerStream(12345, dt).draw(200_000)
    z = abs(x.mean()) / (math.sqrt(dt) / math.sqrt(x.size))
    v = abs(x.var() / dt - 1)
    return z < 4 and v < 0.01, f"|mean| = {z:.2f} sigma, var/dt - 1 = {v:.1e}"


def _lindblad_trace() -> tuple[bool, str]:
    spec = ModelSpec(qubit_count=0, fock_dim_resonator=12, eps_p=1.0, K=0.5)
    H = build_kerr_resonator(spec)
    rho = QuantumState(H.layout, coherent_state(12, 0.8)).density()
    drift = 0.0
    for _ in range(20):
        rho = lindblad_step(rho, H, build_collapse_ops(spec), 1e-2)
        drift = max(drift, abs(np.trace(rho.data).real - 1))
    return drift < 1e-10, f"trace drift {drift:.1e}"


def _identical_blocks() -> tuple[bool, str]:
    spec = ModelSpec(qubit_count=0, fock_dim_resonator=10, eps_p=1.0, K=0.3)
    H = build_kerr_resonator(spec)
    fit = dephasing_rate_numeric(H, H, build_collapse_ops(spec), horizon=5.0, n_samples=21)
    return abs(fit.rate) < 1e-9, f"rate {fit.rate:.1e}"


def _record_round_trip() -> tuple[bool, str]:
    from .ensemble import load_record, save_record

    rng = np.random.default_rng(1)
    rec = TrajectoryRecord(
        index=3, seed=99, dt=1e-3, kappa=1.0, j_samples=rng.normal(size=50),
        checkpoint_times=np.arange(6) * 0.01, a_mean=rng.normal(size=6) + 1j,
        n_mean=rng.random(6), rho_c=np.tile(np.eye(4, dtype=complex) / 4, (6, 1, 1)),
        true_parity="odd", initial_state="odd-bell",
    )
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "r.bin"
        save_record(rec, path)
        back = load_record(path)
    ok = all(
        np.array_equal(getattr(rec, f), getattr(back, f))
        for f in ("j_samples", "s_of_tau", "checkpoint_times", "a_mean", "n_mean", "rho_c")
    ) and (back.index, back.seed, back.true_parity) == (rec.index, rec.seed, rec.true_parity)
    return ok, "bit-exact" if ok else "mismatch"


def _four_qubit_table() -> tuple[bool, str]:
    from .four_qubit import shift_table

    table = shift_table(4)
    counts = [len(v) for v in table.values()]
    ok = counts == [1, 4, 6, 4, 1] and list(table) == [-4, -2, 0, 2, 4]
    return ok, f"degeneracies {counts}"


CHECKS: dict[str, Check] = {
    "ladder commutator": _ladder_commutator,
    "two-qubit QND structure": _qnd_structure,
    "steady-state fixed point": _fixed_point,
    "concurrence pure-state oracle": _concurrence_oracle,
    "coherent-state partial trace": _coherent_partial_trace,
    "SSE norm preservation": _sse_purity,
    "Wiener moments": _wiener_moments,
    "Lindblad trace preservation": _lindblad_trace,
    "identical-block dephasing": _identical_blocks,
    "record round trip": _record_round_trip,
    "four-qubit shift table": _four_qubit_table,
}


def run_validation() -> list[tuple[str, bool, str]]:
    out = []
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
