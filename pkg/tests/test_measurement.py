import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kerrparity.measurement import (
    ClassifierModel,
    TrajectoryRecord,
    best_threshold,
    cumulative_signal,
    fidelity_curve,
    integrate_signal,
    measurement_fidelity,
    optimize_threshold,
    read_csv,
    split_train_test,
    wilson_interval,
)


def record(j, index=0, parity="odd", dt=0.1, kappa=1.0):
    return TrajectoryRecord(index=index, seed=index, dt=dt, kappa=kappa, j_samples=np.asarray(j, float),
                            true_parity=parity)


def synthetic(n_per, mean_odd, steps=50, dt=0.1, seed=0):
    """Even records carry white noise only; odd records add +/- mean_odd."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(2 * n_per):
        parity = "odd" if k % 2 else "even"
        j = rng.normal(0, 1 / math.sqrt(dt), steps)
        if parity == "odd":
            j += mean_odd * (1 if (k // 2) % 2 else -1)
        out.append(record(j, index=k, parity=parity, dt=dt))
    return out


class TestSignal:
    def test_zero_current(self):
        r = record(np.zeros(10))
        assert integrate_signal(r, 0.5) == 0.0

    def test_constant_current(self):
        r = record(np.full(20, 3.0), dt=0.05, kappa=4.0)
        assert integrate_signal(r, 1.0) == pytest.approx(2 * 3.0 * 1.0)
        assert integrate_signal(r, 0.525) == pytest.approx(6.0 * 0.525)

    def test_starts_at_zero_and_checks_range(self):
        r = record(np.ones(10))
        assert r.s_of_tau[0] == 0.0
        with pytest.raises(ValueError):
            integrate_signal(r, 2.0)
        with pytest.raises(ValueError):
            integrate_signal(r, -0.1)

    def test_recompute_is_bit_exact(self):
        r = record(np.random.default_rng(0).normal(size=1000), dt=1e-3, kappa=1.7)
        assert np.array_equal(r.recomputed_signal(), r.s_of_tau)
        assert np.array_equal(cumulative_signal(r.j_samples, r.dt, r.kappa), r.s_of_tau)

    def test_bad_parity_label(self):
        with pytest.raises(ValueError):
            record(np.zeros(3), parity="maybe")


class TestThreshold:
    def test_separable(self):
        thr, fid = best_threshold(np.array([0.1, 0.2]), np.array([1.0, 2.0]))
        assert fid == 1.0
        assert 0.2 < thr < 1.0

    def test_tie_goes_to_larger_threshold(self):
        # fully separable at every threshold in [0.2, 1.0); the largest candidate wins
        thr, _ = best_threshold(np.array([0.2]), np.array([1.0]))
        assert thr == pytest.approx(0.6)

    def test_identical_distributions(self):
        x = np.array([0.1, 0.5, 0.9])
        thr, fid = best_threshold(x, x)
        assert fid == pytest.approx(0.5)

    def test_classifier_rule(self):
        m = ClassifierModel(1.0)
        assert list(m.classify([-2.0, -0.5, 0.0, 1.0, 1.5])) == ["odd", "even", "even", "even", "odd"]
        with pytest.raises(ValueError):
            ClassifierModel(-1.0)

    def test_needs_both_parities(self):
        with pytest.raises(ValueError):
            optimize_threshold([record(np.ones(5), parity="odd")], 0.3)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_sign_flip_invariance(self, seed):
        rng = np.random.default_rng(seed)
        recs = [record(rng.normal(size=20) + (k % 2) * 2, index=k, parity=("odd" if k % 2 else "even"))
                for k in range(20)]
        flipped = [record(-r.j_samples, index=r.index, parity=r.true_parity) for r in recs]
        a, b = optimize_threshold(recs, 1.5), optimize_threshold(flipped, 1.5)
        assert a.threshold == pytest.approx(b.threshold, abs=1e-12)
        assert measurement_fidelity(recs, a, 1.5).f_m == measurement_fidelity(flipped, b, 1.5).f_m


class TestFidelity:
    def test_all_misclassified(self):
        recs = [record(np.zeros(10), 0, "odd"), record(np.full(10, 5.0), 1, "even")]
        est = measurement_fidelity(recs, ClassifierModel(1.0), 1.0)
        assert est.f_m == 0.0
        assert est.ci_lo == 0.0

    def test_perfect(self):
        recs = [record(np.zeros(10), 0, "even"), record(np.full(10, 5.0), 1, "odd")]
        assert measurement_fidelity(recs, ClassifierModel(1.0), 1.0).f_m == 1.0

    def test_empty_test_set(self):
        with pytest.raises(ValueError):
            measurement_fidelity([], ClassifierModel(1.0), 1.0)

    def test_wilson_textbook_value(self):
        lo, hi = wilson_interval(0.5, 100)
        assert lo == pytest.approx(0.4038, abs=1e-4)
        assert hi == pytest.approx(0.5962, abs=1e-4)

    @given(p=st.floats(0, 1), n=st.integers(1, 10_000))
    def test_wilson_contains_estimate(self, p, n):
        lo, hi = wilson_interval(p, n)
        assert 0.0 <= lo <= p + 1e-12 and p - 1e-12 <= hi <= 1.0

    def test_split_is_disjoint_and_balanced(self):
        recs = synthetic(50, 2.0)
        train, test = split_train_test(recs)
        assert not {r.index for r in train} & {r.index for r in test}
        assert len(train) == len(test) == 50
        assert sum(r.true_parity == "odd" for r in test) == 25

    def test_no_information_gives_half(self):
        curve = fidelity_curve(synthetic(400, 0.0), [1.0, 2.0, 5.0])
        np.testing.assert_allclose(curve.f_m, 0.5, atol=0.05)

    def test_curve_starts_at_half_and_grows(self):
        curve = fidelity_curve(synthetic(200, 2.0), [0.0, 1.0, 5.0])
        assert curve.f_m[0] == pytest.approx(0.5)
        assert curve.f_m[-1] > 0.95
        assert np.all(curve.ci_lo <= curve.f_m) and np.all(curve.f_m <= curve.ci_hi)

    def test_curve_csv(self, tmp_path):
        curve = fidelity_curve(synthetic(20, 2.0), [0.0, 2.5])
        curve.to_csv(tmp_path / "f.csv")
        back = read_csv(tmp_path / "f.csv")
        assert list(back) == ["tau", "f_m", "ci_lo", "ci_hi"]
        np.testing.assert_array_equal(back["f_m"], curve.f_m)
