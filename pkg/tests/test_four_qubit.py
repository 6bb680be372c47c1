import math

import numpy as np
import pytest

from kerrparity.analytics import dephasing_rates, steady_state
from kerrparity.four_qubit import (
    SidebandSweep,
    build_parity_blocks,
    classical_odd_fixed_point,
    effective_resonator_decay,
    even_block_response,
    odd_block_bifurcation,
    shift_table,
    sideband_dephasing_estimate,
)
from kerrparity.model import PRESETS, ModelError, ModelSpec


def small(**kw):
    base = dict(kappa=1.0, K=0.2, chi=5.0, eps_p=1.5, g=2.0, kappa_f=4.0,
                fock_dim_resonator=8, fock_dim_filter=3, qubit_count=4)
    base.update(kw)
    return ModelSpec(**base)


class TestBlocks:
    def test_shift_table(self):
        t = shift_table(4)
        assert {k: len(v) for k, v in t.items()} == {-4: 1, -2: 4, 0: 6, 2: 4, 4: 1}
        assert t[4] == ["0000"] and t[-4] == ["1111"]
        assert all(s.count("1") % 2 == 1 for s in t[2] + t[-2])

    def test_parity_blocks(self):
        blocks = build_parity_blocks(small())
        assert len(blocks) == 5
        assert blocks.total_degeneracy() == 16
        assert sorted(b.shift_units for b in blocks.odd) == [-2, 2]
        assert sorted(b.shift_units for b in blocks.even) == [-4, 0, 4]
        assert blocks.by_shift(0).degeneracy == 6
        with pytest.raises(KeyError):
            blocks.by_shift(1)

    def test_skip_hamiltonians(self):
        assert all(b.hamiltonian is None for b in build_parity_blocks(small(), with_hamiltonians=False).blocks)

    @pytest.mark.parametrize("kw", [{"fock_dim_filter": None}, {"kappa_f": 0.0}, {"g": 0.0}])
    def test_needs_filter(self, kw):
        with pytest.raises(ModelError):
            build_parity_blocks(small(**kw))

    def test_needs_four_qubits(self):
        with pytest.raises(ModelError):
            build_parity_blocks(PRESETS["text-params"])


class TestClassicalFixedPoint:
    def test_matches_single_mode_with_effective_loss(self):
        spec = PRESETS["four-qubit"]
        alpha, beta = classical_odd_fixed_point(spec)
        pred = steady_state(spec)
        assert abs(alpha) ** 2 == pytest.approx(pred.photon_number, rel=1e-9)
        assert pred.photon_number == pytest.approx(10.0, rel=1e-12)
        # a resonantly driven, damped filter follows the resonator adiabatically
        assert beta == pytest.approx(-1j * spec.g * alpha / spec.kappa_f, rel=1e-9)


class TestBlockDynamics:
    def test_uncoupled_filter_stays_empty(self):
        spec = small(g=0.0, kappa_int=1.0)
        r = odd_block_bifurcation(spec, horizon=1.0, n_samples=11, tail_tol=1.0)
        assert np.abs(r.f_mean).max() == 0.0
        assert np.abs(r.n_filter).max() == 0.0
        assert r.n_resonator[-1] > 0.1

    def test_odd_blocks_mirror(self):
        spec = small(pump_phase=0.6, coupling_phase=-0.3)
        plus = odd_block_bifurcation(spec, horizon=2.0, shift_sign=1, n_samples=21, tail_tol=1.0)
        minus = odd_block_bifurcation(spec, horizon=2.0, shift_sign=-1, n_samples=21, tail_tol=1.0)
        np.testing.assert_allclose(plus.output_amplitude, minus.output_amplitude, atol=1e-9)
        np.testing.assert_allclose(plus.resonator_amplitude, minus.resonator_amplitude, atol=1e-9)
        assert plus.output_amplitude[-1] > 0.1

    def test_tail_monitor(self):
        with pytest.raises(ModelError):
            odd_block_bifurcation(small(), horizon=4.0, n_samples=5, tail_tol=1e-6)

    def test_bad_shift(self):
        with pytest.raises(ValueError):
            odd_block_bifurcation(small(), 1.0, shift_sign=2)
        with pytest.raises(ValueError):
            even_block_response(small(), 2, 1.0)

    @pytest.mark.parametrize("units", [-4, 0, 4])
    def test_even_blocks_stay_near_vacuum(self, units):
        spec = small(chi=20.0)
        r = even_block_response(spec, units, horizon=1.0, n_samples=11)
        assert r.n_resonator.max() < 0.2

    def test_effective_resonator_decay(self):
        assert effective_resonator_decay(1.0, 20.0) == pytest.approx(1.0 / 20.0, rel=0.1)


class TestSidebandDephasing:
    def test_vanishes_without_sidebands(self):
        est = sideband_dephasing_estimate(PRESETS["four-qubit"].with_(chi=40.0), include_sidebands=False)
        assert abs(est.rate_numeric) < 1e-9
        assert est.rate_closed_form == 0.0

    def test_closed_form_value(self):
        spec = PRESETS["four-qubit"]
        r = dephasing_rates(spec)
        assert r.gamma_o_eff == pytest.approx(10.0 / (1 + 160.0**2), rel=1e-12)

    def test_error_probability(self):
        est = sideband_dephasing_estimate(PRESETS["four-qubit"].with_(chi=40.0), include_sidebands=False)
        p_num, p_cf = est.error_probability(5.0)
        assert p_cf == 0.0 and abs(p_num) < 1e-8

    def test_sweep_shape_metric(self, tmp_path):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        exact = 3.0 / (1 + (8 * x) ** 2)
        sweep = SidebandSweep(x, exact, exact)
        assert sweep.lorentzian_r2() == pytest.approx(1.0)
        noisy = SidebandSweep(x, exact * np.array([1, 3, 0.3, 2]), exact)
        assert noisy.lorentzian_r2() < 0.99
        sweep.to_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "chi_over_kappa_f,rate_numeric,rate_closed_form"

    @pytest.mark.slow
    def test_moderate_shift_agrees_with_closed_form(self):
        est = sideband_dephasing_estimate(PRESETS["four-qubit"].with_(chi=40.0))
        assert est.rate_numeric == pytest.approx(est.rate_closed_form, rel=0.05)
        assert not est.fit.flagged
