import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerrparity.analytics import (
    classical_eom_rhs,
    dephasing_rate_numeric,
    dephasing_rates,
    eom_jacobian_at_origin,
    fit_exponential_decay,
    pointer_phase,
    solve_eom_fixed_point,
    steady_state,
)
from kerrparity.model import PRESETS, ModelError, ModelSpec, build_kerr_resonator
from kerrparity.operators import HilbertLayout, OperatorMatrix, fock_destroy

# reference values evaluated independently at 30 significant digits
THETA_TEXT = 0.100678960395165395727562776109
ALPHA_SQ_TEXT = 13.9970842444753034
GAMMA_E_TEXT = 6.24544647563871580e-4
OVERLAP_TEXT = 0.999375455352436128
GAMMA_EFF_FOUR_QUBIT = 3.90609741806960666e-4


class TestSteadyState:
    def test_reference_parameters(self):
        p = steady_state(PRESETS["text-params"])
        assert p.theta_o == pytest.approx(THETA_TEXT, abs=1e-14)
        assert p.photon_number == pytest.approx(ALPHA_SQ_TEXT, rel=1e-13)
        assert p.alpha_mag == pytest.approx(3.741267732263397, rel=1e-13)
        assert p.above_threshold

    def test_stability_exponents(self):
        spec = ModelSpec(eps_p=2.5, kappa=1.0)
        p = steady_state(spec)
        assert (p.lambda_plus, p.lambda_minus) == (2.0, -3.0)
        assert p.bifurcation_timescale == 0.5
        eig = np.sort(np.linalg.eigvals(eom_jacobian_at_origin(spec)).real)
        np.testing.assert_allclose(eig, [-3.0, 2.0])

    def test_below_threshold(self):
        p = steady_state(ModelSpec(eps_p=0.4))
        assert p.alpha_mag == 0.0 and math.isnan(p.theta_o) and not p.above_threshold
        assert pointer_phase(ModelSpec(eps_p=0.4)) == 0.0

    def test_zero_kerr_above_threshold(self):
        with pytest.raises(ModelError):
            steady_state(ModelSpec(K=0.0))

    def test_phase_limits(self):
        assert steady_state(ModelSpec(eps_p=0.5001)).theta_o == pytest.approx(0.775398996623297, abs=1e-12)
        assert steady_state(ModelSpec(eps_p=1e6)).theta_o < 1e-6
        assert steady_state(ModelSpec(eps_p=0.5 + 1e-12)).theta_o == pytest.approx(math.pi / 4, abs=1e-5)

    def test_pointer_phase_sign(self):
        assert pointer_phase(PRESETS["text-params"]) == pytest.approx(-THETA_TEXT, abs=1e-14)

    def test_fixed_point_grid(self):
        worst = 0.0
        for eps in np.linspace(0.6, 5.0, 10):
            for K in np.linspace(0.05, 1.0, 10):
                spec = ModelSpec(eps_p=float(eps), K=float(K))
                p = steady_state(spec)
                x, y = p.alpha_mag * math.cos(p.theta_o), p.alpha_mag * math.sin(p.theta_o)
                worst = max(worst, *map(abs, classical_eom_rhs(x, y, spec)))
        assert worst < 1e-10

    @given(eps=st.floats(0.6, 5.0), K=st.floats(0.05, 1.0))
    @settings(max_examples=40, deadline=None)
    def test_root_finder_agrees_with_closed_form(self, eps, K):
        spec = ModelSpec(eps_p=eps, K=K)
        p = steady_state(spec)
        guess = (1.1 * p.alpha_mag * math.cos(p.theta_o + 0.1), 0.9 * p.alpha_mag * math.sin(p.theta_o + 0.1))
        x, y = solve_eom_fixed_point(spec, guess)
        assert math.hypot(x, y) == pytest.approx(p.alpha_mag, abs=1e-10 * max(1, p.alpha_mag))
        assert math.atan2(y, x) == pytest.approx(p.theta_o, abs=1e-10)
        # the mirrored branch is also a fixed point
        assert max(map(abs, classical_eom_rhs(-x, -y, spec))) < 1e-10


class TestClosedFormRates:
    def test_even_subspace(self):
        r = dephasing_rates(PRESETS["text-params"])
        assert r.gamma_e == pytest.approx(GAMMA_E_TEXT, rel=1e-12)
        assert r.pointer_overlap == pytest.approx(OVERLAP_TEXT, rel=1e-14)
        assert r.squeeze_r == 0.025
        assert r.gamma_e_coarse == pytest.approx(0.0025)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.5])
    def test_small_squeezing_limit(self, eps):
        r = dephasing_rates(ModelSpec(eps_p=eps, chi=100.0))
        assert r.gamma_e == pytest.approx((eps / 400) ** 2, rel=1e-3)

    def test_filtered_odd_subspace(self):
        r = dephasing_rates(PRESETS["four-qubit"])
        assert r.gamma_o_eff == pytest.approx(GAMMA_EFF_FOUR_QUBIT, rel=1e-12)
        assert r.kappa_eff == pytest.approx(1.0)
        assert 5 * r.gamma_o_eff == pytest.approx(1.9530487090348e-3, rel=1e-12)

    def test_filter_limits(self):
        spec = PRESETS["four-qubit"]
        slow = dephasing_rates(spec.with_(chi=1e-6))
        assert slow.gamma_o_eff == pytest.approx(slow.kappa_eff * slow.alpha_sq, rel=1e-9)
        assert dephasing_rates(spec.with_(chi=1e6)).gamma_o_eff < 1e-9

    def test_no_filter(self):
        r = dephasing_rates(PRESETS["text-params"])
        assert math.isnan(r.gamma_o_eff) and math.isnan(r.kappa_eff)
        assert r.gamma_o_naive == pytest.approx(ALPHA_SQ_TEXT)

    def test_zero_chi(self):
        with pytest.raises(ModelError):
            dephasing_rates(ModelSpec(chi=0.0))


def _resonator_ops(N):
    lay = HilbertLayout(0, (N,))
    a = fock_destroy(N)
    return lay, a


class TestNumericOracle:
    def test_identical_blocks(self):
        spec = ModelSpec(qubit_count=0, fock_dim_resonator=10, eps_p=1.0, K=0.3)
        H = build_kerr_resonator(spec)
        lay, a = _resonator_ops(10)
        fit = dephasing_rate_numeric(H, H, [(1.0, OperatorMatrix(lay, a))], horizon=5.0, n_samples=21)
        assert abs(fit.rate) < 1e-9

    def test_opposite_linear_drives(self):
        # coherent pointers at +-2iF/kappa separate by |d alpha| = 4F/kappa; the
        # coherence decays at kappa |d alpha|^2 / 2
        N, F, kappa = 20, 0.25, 1.0
        lay, a = _resonator_ops(N)
        x = a + a.conj().T
        fit = dephasing_rate_numeric(
            OperatorMatrix(lay, F * x), OperatorMatrix(lay, -F * x), [(kappa, OperatorMatrix(lay, a))],
            horizon=40.0, t_start=25.0,
        )
        assert fit.rate == pytest.approx(kappa * (4 * F / kappa) ** 2 / 2, rel=1e-4)
        assert not fit.flagged

    def test_fit_exact_exponential(self):
        t = np.linspace(0, 4, 41)
        rate, resid = fit_exponential_decay(t, 3.0 * np.exp(-0.7 * t) * np.exp(2j * t), 1.0)
        assert rate == pytest.approx(0.7, rel=1e-12)
        assert resid < 1e-12

    def test_non_exponential_decay_is_flagged(self):
        # a coherence that decays then partially revives
        N = 12
        lay, a = _resonator_ops(N)
        n = a.conj().T @ a
        C0 = np.zeros((N, N), complex)
        C0[0, 0] = C0[1, 1] = 0.5
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = dephasing_rate_numeric(
                OperatorMatrix(lay, 2.0 * n), OperatorMatrix(lay, np.zeros((N, N))), [],
                horizon=3.0, t_start=0.5, initial=C0, n_samples=61,
            )
        assert fit.flagged
        assert any("not exponential" in str(w.message) for w in caught)

    def test_bad_arguments(self):
        lay, a = _resonator_ops(8)
        H = OperatorMatrix(lay, np.zeros((8, 8)))
        with pytest.raises(ValueError):
            dephasing_rate_numeric(H, H, [], horizon=1.0, t_start=2.0)
