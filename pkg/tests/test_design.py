import json
import math

import mpmath as mp
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twocusum.analytic import (
    DriftPair, Measure, RuleClass, ThresholdPair, corollary_bounds, harmonic_mean_expectation,
    one_sided_expectation,
)
from twocusum.design import (
    CALIBRATION_RTOL, Evaluator, SearchMode, calibrate_harmonic, calibrate_one_sided,
    make_thresholds, search_best_rule, theorem_class,
)
from twocusum.errors import InputError, SearchError


def lambert_threshold(mu, gamma):
    """Closed-form root of 2 f_nu(mu) = gamma: e^z - z = K with z = nu mu."""
    # mpmath keeps e^{-K} representable for large K
    with mp.workdps(40):
        k = 1 + mp.mpf(gamma) * mp.mpf(mu) ** 2 / 2
        w = mp.lambertw(-mp.exp(-k), -1).real
        return float((-k - w) / mu)


class TestCalibration:
    def test_examples(self):
        e2 = math.exp(2.0)
        assert calibrate_one_sided(1.0, 2 * (e2 - 3)) == pytest.approx(2.0, rel=1e-12)
        th = calibrate_harmonic(DriftPair(1.0, 1.0), e2 - 3)
        assert th.nu1 == th.nu2 == pytest.approx(2.0, rel=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.05, 5.0), st.floats(0.5, 1e5))
    def test_matches_closed_form(self, mu, gamma):
        nu = calibrate_one_sided(mu, gamma)
        assert nu == pytest.approx(lambert_threshold(mu, gamma), rel=1e-9)
        assert one_sided_expectation(nu, mu) == pytest.approx(gamma, rel=CALIBRATION_RTOL)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0.1, 3.0), st.floats(0.1, 3.0), st.floats(0.5, 1e5))
    def test_harmonic_round_trip(self, mu1, mu2, gamma):
        d = DriftPair(mu1, mu2)
        th = calibrate_harmonic(d, gamma)
        assert th.nu1 == th.nu2
        assert harmonic_mean_expectation(th.nu1, Measure.INFINITY, d) == pytest.approx(
            gamma, rel=CALIBRATION_RTOL)

    def test_harmonic_below_one_sided(self):
        d = DriftPair(1.0, 1.0)
        assert calibrate_harmonic(d, 50.0).nu1 > calibrate_one_sided(1.0, 50.0)

    @pytest.mark.parametrize("gamma", [0.0, -1.0, math.inf, math.nan])
    def test_bad_gamma(self, gamma):
        with pytest.raises(InputError):
            calibrate_one_sided(1.0, gamma)
        with pytest.raises(InputError):
            calibrate_harmonic(DriftPair(1.0, 1.0), gamma)

    def test_bad_mu(self):
        with pytest.raises(InputError):
            calibrate_one_sided(0.0, 10.0)


class TestHelpers:
    def test_theorem_class(self):
        assert theorem_class(DriftPair(1.0, 1.0)) is RuleClass.G
        assert theorem_class(DriftPair(0.5, 1.0)) is RuleClass.C2
        assert theorem_class(DriftPair(1.0, 0.5)) is RuleClass.C1

    def test_make_thresholds(self):
        assert make_thresholds(1.0, 0.5, RuleClass.C1) == ThresholdPair(1.5, 1.0)
        assert make_thresholds(1.0, 0.5, RuleClass.C2) == ThresholdPair(1.0, 1.5)
        assert make_thresholds(1.0, 0.0, RuleClass.G).rule_class is RuleClass.G

    def test_evaluator_budget(self):
        with pytest.raises(InputError):
            Evaluator(DriftPair(1.0, 1.0), SearchMode.MONTECARLO, budget=0)
        assert Evaluator(DriftPair(1.0, 1.0), SearchMode.MONTECARLO, budget=1).n_paths == 2

    def test_mc_delays_mirror_exactly(self):
        a = Evaluator(DriftPair(0.5, 1.0), SearchMode.MONTECARLO, budget=400, seed=3)
        b = Evaluator(DriftPair(1.0, 0.5), SearchMode.MONTECARLO, budget=400, seed=3)
        th = ThresholdPair(3.0, 3.5)
        pa, na = a.delays(th)
        pb, nb = b.delays(th.swapped())
        assert (pa.mean, na.mean) == (nb.mean, pb.mean)
        assert a.false_alarm(th).mean == b.false_alarm(th.swapped()).mean

    def test_symmetric_delays_equal(self):
        ev = Evaluator(DriftPair(1.0, 1.0), SearchMode.MONTECARLO, budget=400, seed=3)
        pos, neg = ev.delays(ThresholdPair(2.5, 2.5))
        assert pos.mean == neg.mean


class TestBoundSearch:
    def test_equal_drifts_harmonic(self):
        r = search_best_rule(DriftPair(1.0, 1.0), 50.0)
        assert r.rule_class is RuleClass.G and r.agrees and r.anomaly is None
        assert r.thresholds == calibrate_harmonic(DriftPair(1.0, 1.0), 50.0)
        assert r.method is SearchMode.BOUND

    def test_feasible_and_consistent(self):
        d = DriftPair(0.5, 1.0)
        r = search_best_rule(d, 50.0)
        b = corollary_bounds(r.thresholds, d, Measure.INFINITY)
        assert b.lower >= 50.0 * (1 - CALIBRATION_RTOL)
        assert r.jl_value == max(r.e_pos, r.e_neg)
        assert r.jl_value == pytest.approx(max(
            corollary_bounds(r.thresholds, d, Measure.POSITIVE).upper,
            corollary_bounds(r.thresholds, d, Measure.NEGATIVE).upper))
        assert len(r.evaluations) > 10

    def test_beats_or_matches_harmonic(self):
        d = DriftPair(0.5, 1.0)
        r = search_best_rule(d, 50.0)
        g = [e for e in r.evaluations if e.thresholds.rule_class is RuleClass.G][0]
        assert r.jl_value <= g.jl

    def test_mirror(self):
        a = search_best_rule(DriftPair(0.5, 1.0), 50.0)
        b = search_best_rule(DriftPair(1.0, 0.5), 50.0)
        assert b.thresholds == a.thresholds.swapped()
        assert b.jl_value == a.jl_value

    def test_anomaly_reported(self):
        r = search_best_rule(DriftPair(0.5, 1.0), 200.0)
        if not r.agrees:
            assert "expected c2" in r.anomaly.lower()

    def test_scaling_invariance(self):
        # Brownian scaling: drifts times c, thresholds over c, times over c^2
        a = search_best_rule(DriftPair(1.0, 1.0), 50.0)
        b = search_best_rule(DriftPair(2.0, 2.0), 12.5)
        assert b.thresholds.nu1 == pytest.approx(a.thresholds.nu1 / 2, rel=1e-9)
        assert b.jl_value == pytest.approx(a.jl_value / 4, rel=1e-9)

    def test_to_dict_json(self):
        r = search_best_rule(DriftPair(0.5, 1.0), 50.0)
        doc = json.loads(json.dumps(r.to_dict()))
        assert doc["rule_class"] == r.rule_class.value
        assert doc["n_evaluations"] == len(r.evaluations)

    def test_unreachable(self):
        with pytest.raises(SearchError):
            search_best_rule(DriftPair(1.0, 1.0), 1e300)

    def test_bad_inputs(self):
        with pytest.raises(InputError):
            search_best_rule(DriftPair(1.0, 1.0), -5.0)
        with pytest.raises(ValueError):
            search_best_rule(DriftPair(1.0, 1.0), 5.0, mode="exhaustive")


class TestSimulatedSearch:
    def test_montecarlo_feasible_and_reproducible(self):
        d = DriftPair(1.0, 1.0)
        a = search_best_rule(d, 20.0, "montecarlo", budget=300, seed=1)
        b = search_best_rule(d, 20.0, "montecarlo", budget=300, seed=1)
        assert a.thresholds == b.thresholds and a.jl_value == b.jl_value
        assert a.criterion >= 20.0
        ev = Evaluator(d, SearchMode.MONTECARLO, budget=300, seed=1)
        e = ev.false_alarm(a.thresholds)
        assert e.mean - 2 * e.stderr == a.criterion

    def test_hybrid_class(self):
        r = search_best_rule(DriftPair(0.5, 1.0), 20.0, "hybrid", budget=300, seed=1)
        assert r.rule_class is RuleClass.C2
        assert r.criterion >= 20.0
        assert r.e_inf_stderr > 0

    def test_tiny_budget(self):
        r = search_best_rule(DriftPair(1.0, 2.0), 20.0, "montecarlo", budget=1, seed=1)
        assert r.criterion >= 20.0
        assert math.isfinite(r.jl_value)
