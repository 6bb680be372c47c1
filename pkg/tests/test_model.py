import math

import numpy as np
import pytest

from kerrparity.model import (
    PRESETS,
    ModelError,
    ModelSpec,
    TimeDependentHamiltonian,
    build_collapse_ops,
    build_four_qubit_effective,
    build_hamiltonian,
    build_kerr_resonator,
    build_two_qubit_model,
    qubit_blocks,
    two_mode_ladders,
)
from kerrparity.operators import LayoutError, embed, fock_destroy, parity_operator, sigma_z


def small_four_qubit(**kw):
    base = dict(kappa=1.0, K=0.2, chi=5.0, eps_p=1.5, g=2.0, kappa_f=4.0,
                fock_dim_resonator=8, fock_dim_filter=3, qubit_count=4)
    base.update(kw)
    return ModelSpec(**base)


class TestModelSpec:
    def test_defaults(self):
        s = ModelSpec()
        assert (s.kappa, s.K, s.chi, s.eps_p) == (1.0, 0.175, 25.0, 2.5)

    @pytest.mark.parametrize(
        "kw", [{"kappa": 0}, {"kappa": -1}, {"kappa_f": -1}, {"K": math.inf},
               {"fock_dim_resonator": 7}, {"qubit_count": 3}, {"fock_dim_filter": 1}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ModelError):
            ModelSpec(**kw)

    def test_round_trip(self):
        s = PRESETS["four-qubit"]
        assert ModelSpec.from_dict(s.to_dict()) == s

    def test_unknown_field(self):
        with pytest.raises(ModelError):
            ModelSpec.from_dict({"kappa": 1.0, "omega_r": 5.0})

    def test_presets_record_both_kerr_values(self):
        assert PRESETS["text-params"].K == 0.175
        assert PRESETS["figure-params"].K == 0.17

    def test_four_qubit_preset(self):
        s = PRESETS["four-qubit"]
        assert s.kappa_eff == pytest.approx(1.0)
        assert s.chi / s.kappa_f == pytest.approx(20.0)
        assert math.sqrt(s.eps_p**2 - s.resonator_loss**2 / 4) / s.K == pytest.approx(10.0)


class TestKerrResonator:
    def test_zero_parameters(self):
        H = build_kerr_resonator(ModelSpec(qubit_count=0, eps_p=0, K=0, delta=0, fock_dim_resonator=8))
        assert np.abs(H.matrix).max() == 0

    def test_two_photon_matrix_elements(self):
        H = build_kerr_resonator(ModelSpec(qubit_count=0, eps_p=1.0, K=0, fock_dim_resonator=8)).matrix
        assert H[0, 2] == pytest.approx(math.sqrt(2) / 2)
        assert H[2, 0] == pytest.approx(math.sqrt(2) / 2)
        top = H[:3, :3].copy()
        top[0, 2] = top[2, 0] = 0
        assert np.abs(top).max() == 0
        n = np.arange(6)
        np.testing.assert_allclose(np.diagonal(H, 2), np.sqrt((n + 1) * (n + 2)) / 2)

    def test_kerr_and_detuning_diagonal(self):
        H = build_kerr_resonator(ModelSpec(qubit_count=0, eps_p=0, K=0.4, delta=1.5, fock_dim_resonator=8)).matrix
        n = np.arange(8)
        np.testing.assert_allclose(np.diag(H).real, 1.5 * n - 0.2 * n * (n - 1))

    def test_requires_no_qubits(self):
        with pytest.raises(ModelError):
            build_kerr_resonator(ModelSpec(qubit_count=2))


class TestTwoQubitModel:
    @pytest.fixture
    def H(self):
        return build_two_qubit_model(ModelSpec(fock_dim_resonator=10, delta=0.3))

    def test_hermitian(self, H):
        assert H.is_hermitian()

    def test_blocks(self, H):
        B = qubit_blocks(H)
        np.testing.assert_array_equal(B[1], B[2])
        n = np.diag(np.arange(10.0))
        np.testing.assert_allclose(B[0] - B[3], 4 * 25.0 * n, atol=1e-12)
        np.testing.assert_allclose(B[0] - B[1], 2 * 25.0 * n, atol=1e-12)

    def test_qnd(self, H):
        for q in (0, 1):
            z = embed(sigma_z(), q, H.layout).matrix
            assert np.abs(H.matrix @ z - z @ H.matrix).max() == 0

    def test_photon_parity_symmetry(self, H):
        U = embed(parity_operator(10), 2, H.layout).matrix
        np.testing.assert_allclose(U @ H.matrix @ U.conj().T, H.matrix, atol=1e-12)
        (rate, L), = build_collapse_ops(ModelSpec(fock_dim_resonator=10))
        # the dissipator D[a] is invariant because U a U^dag = -a
        np.testing.assert_allclose(U @ L.matrix @ U.conj().T, -L.matrix, atol=1e-12)

    def test_not_block_diagonal_detected(self):
        op = build_two_qubit_model(ModelSpec(fock_dim_resonator=8))
        x = embed(np.array([[0, 1], [1, 0]]), 0, op.layout)
        with pytest.raises(LayoutError):
            qubit_blocks(op + x)

    def test_build_hamiltonian_dispatch(self):
        assert build_hamiltonian(ModelSpec(fock_dim_resonator=8)).layout.dim == 32
        with pytest.raises(ModelError):
            build_hamiltonian(small_four_qubit())


class TestFourQubitEffective:
    def test_odd_block_static_part(self):
        spec = small_four_qubit()
        layout, a, f = two_mode_ladders(spec)
        ad = a.conj().T
        expected = (
            0.5 * spec.eps_p * (a @ a + ad @ ad) - 0.5 * spec.K * ad @ ad @ a @ a
            + 0.5 * spec.g * (a @ f.conj().T + ad @ f)
        )
        for sign in (1, -1):
            H = build_four_qubit_effective(spec, sign * 2 * spec.chi, include_sidebands=False)
            assert H.is_static
            np.testing.assert_allclose(H.static.matrix, expected, atol=1e-12)

    def test_odd_blocks_related_by_phase_conjugation(self):
        spec = small_four_qubit(pump_phase=0.7, coupling_phase=-0.4)
        Hp = build_four_qubit_effective(spec, 2 * spec.chi, include_sidebands=False).static.matrix
        Hm = build_four_qubit_effective(spec, -2 * spec.chi, include_sidebands=False).static.matrix
        # +2chi picks up the second pump tone, -2chi the second coupling tone; a phase rotation
        # of both modes, R = exp(i(t_a n_a + t_f n_f)), maps one static part onto the other
        layout, a, f = two_mode_ladders(spec)
        na = np.diag(a.conj().T @ a).real
        nf = np.diag(f.conj().T @ f).real
        t_a = -0.5 * spec.pump_phase
        phase = np.exp(1j * (t_a * na + (t_a - spec.coupling_phase) * nf))
        R = np.diag(phase)
        np.testing.assert_allclose(R.conj().T @ Hp @ R, Hm, atol=1e-12)

    def test_sideband_terms(self):
        spec = small_four_qubit()
        H = build_four_qubit_effective(spec, -2 * spec.chi, include_sidebands=True)
        freqs = sorted(d.frequency for d in H.drive_terms)
        assert freqs == pytest.approx([4 * spec.chi, 8 * spec.chi])
        for t in np.linspace(0, 3, 7):
            mags = sorted(abs(d.coefficient(t)) for d in H.drive_terms)
            assert mags == pytest.approx(sorted([spec.eps_p / 2, spec.g / 2]))
        Hp = build_four_qubit_effective(spec, 2 * spec.chi, include_sidebands=True)
        assert sorted(d.frequency for d in Hp.drive_terms) == pytest.approx([-8 * spec.chi, -4 * spec.chi])

    @pytest.mark.parametrize("units,freqs", [(0, [-4, -2, 2, 4]), (4, [-4, -2, 2, 4]), (-4, [-4, -2, 2, 4])])
    def test_even_blocks(self, units, freqs):
        spec = small_four_qubit()
        H = build_four_qubit_effective(spec, units * spec.chi, include_sidebands=False)
        assert sorted(d.frequency / spec.chi for d in H.drive_terms) == pytest.approx(freqs)
        layout, a, f = two_mode_ladders(spec)
        ad = a.conj().T
        np.testing.assert_allclose(
            H.static.matrix, units * spec.chi * ad @ a - 0.5 * spec.K * ad @ ad @ a @ a, atol=1e-12
        )

    def test_hermitian_at_random_times(self):
        spec = small_four_qubit(pump_phase=0.3, coupling_phase=1.1)
        rng = np.random.default_rng(0)
        for units in (-4, -2, 0, 2, 4):
            H = build_four_qubit_effective(spec, units * spec.chi)
            for t in rng.uniform(0, 10, 50):
                M = H.at(t)
                assert np.abs(M - M.conj().T).max() < 1e-12

    def test_invalid_shift(self):
        with pytest.raises(ModelError):
            build_four_qubit_effective(small_four_qubit(), 3.0)

    def test_needs_filter(self):
        with pytest.raises(ModelError):
            build_four_qubit_effective(small_four_qubit(fock_dim_filter=None), 0.0)

    def test_time_dependent_container(self):
        spec = small_four_qubit()
        H = build_four_qubit_effective(spec, 0.0)
        assert isinstance(H, TimeDependentHamiltonian)
        assert H.max_frequency() == pytest.approx(4 * spec.chi)


class TestCollapseOps:
    def test_two_qubit(self):
        (rate, L), = build_collapse_ops(ModelSpec(fock_dim_resonator=8))
        assert rate == 1.0
        np.testing.assert_array_equal(L.matrix, embed(fock_destroy(8), 2, L.layout).matrix)

    def test_four_qubit_without_internal_loss(self):
        ops = build_collapse_ops(small_four_qubit())
        assert [r for r, _ in ops] == [4.0]

    def test_four_qubit_with_internal_loss(self):
        ops = build_collapse_ops(small_four_qubit(kappa_int=0.1))
        assert [r for r, _ in ops] == [0.1, 4.0]
        assert all(r >= 0 for r, _ in ops)
