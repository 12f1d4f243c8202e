"""F tail accuracy, ANOVA against the definitional oracle, experiment driving."""

import math

import numpy as np
import pytest

from conftest import make_topology
from oracles import three_way_anova_reference
from slice_forecast.anova import (EFFECTS, HIGH, LOW, AnovaError,
                                  FactorialDesign, FactorialObservation,
                                  f_upper_tail, factorial_experiment,
                                  three_way_anova)


def observations_from_array(y: np.ndarray):
    obs = []
    for ia, da in enumerate((LOW, HIGH)):
        for ib, lo in enumerate((LOW, HIGH)):
            for ic, tk in enumerate((LOW, HIGH)):
                for val in y[ia, ib, ic, :]:
                    obs.append(FactorialObservation(da, lo, tk, float(val)))
    return obs


class TestFUpperTail:
    def test_zero_statistic(self):
        assert f_upper_tail(0.0, 3, 7) == 1.0

    def test_infinite_statistic(self):
        assert f_upper_tail(math.inf, 3, 7) == 0.0

    def test_closed_form_d2_2(self):
        # F(2,2) upper tail is exactly 1/(1+x)
        for x in (0.25, 0.5, 1.0, 2.0, 5.0, 20.0, 123.0):
            assert f_upper_tail(x, 2, 2) == pytest.approx(1.0 / (1.0 + x),
                                                          abs=1e-10)

    def test_chi_square_limit(self):
        assert f_upper_tail(3.8415, 1, 10 ** 6) == pytest.approx(0.05, abs=5e-4)

    def test_against_mpmath_oracle(self):
        import mpmath
        cases = [(0.7, 1, 4), (2.5, 3, 12), (9.1, 2, 30), (0.05, 5, 5),
                 (44.0, 1, 24), (1.0, 10, 2)]
        for x, d1, d2 in cases:
            want = float(mpmath.betainc(d2 / 2, d1 / 2, 0, d2 / (d2 + d1 * x),
                                        regularized=True))
            assert f_upper_tail(x, d1, d2) == pytest.approx(want, abs=1e-10)

    def test_monotone_decreasing(self):
        xs = np.linspace(0.01, 50, 200)
        ps = [f_upper_tail(float(x), 4, 17) for x in xs]
        assert all(b <= a for a, b in zip(ps, ps[1:]))


class TestThreeWayAnova:
    def test_constant_response_all_zero(self):
        y = np.full((2, 2, 2, 3), 9.0)
        table = three_way_anova(observations_from_array(y))
        assert table.zero_error_variance
        for source in EFFECTS:
            row = table.row(source)
            assert row.ss == pytest.approx(0.0)
            assert row.f == 0.0
            assert row.p == 1.0

    def test_pure_loss_effect_hand_computed(self):
        # +10 when loss is high, no noise: SS_loss = N*25, all else 0, F inf
        y = np.zeros((2, 2, 2, 3))
        y[:, 1, :, :] = 10.0
        table = three_way_anova(observations_from_array(y))
        n = 24
        assert table.row("loss").ss == pytest.approx(n * 25.0)
        assert math.isinf(table.row("loss").f)
        assert table.row("loss").p == 0.0
        for source in EFFECTS:
            if source != "loss":
                assert table.row(source).ss == pytest.approx(0.0)
        assert table.zero_error_variance

    def test_matches_reference_on_seeded_designs(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            r = int(rng.integers(2, 7))
            y = rng.normal(size=(2, 2, 2, r))
            y[1, :, :, :] += 2.0  # injected delay effect
            table = three_way_anova(observations_from_array(y))
            want = three_way_anova_reference(y)
            pairs = {"delay": "a", "loss": "b", "tokens": "c",
                     "delay:loss": "ab", "delay:tokens": "ac",
                     "loss:tokens": "bc", "delay:loss:tokens": "abc"}
            for source, ref in pairs.items():
                row = table.row(source)
                assert row.ss == pytest.approx(want["ss"][ref], rel=1e-6, abs=1e-9)
                assert row.f == pytest.approx(want["f"][ref], rel=1e-6, abs=1e-9)
                assert row.p == pytest.approx(want["p"][ref], rel=1e-6, abs=1e-9)
            assert table.row("error").ss == pytest.approx(want["ss"]["error"],
                                                          rel=1e-6)

    def test_matches_statsmodels(self):
        import pandas as pd
        import statsmodels.formula.api as smf
        from statsmodels.stats.anova import anova_lm

        rng = np.random.default_rng(7)
        y = rng.normal(size=(2, 2, 2, 4)) + np.arange(2)[:, None, None, None]
        obs = observations_from_array(y)
        table = three_way_anova(obs)
        frame = pd.DataFrame([{"a": o.delay_level, "b": o.loss_level,
                               "c": o.token_level, "y": o.response_ms}
                              for o in obs])
        fitted = smf.ols("y ~ C(a) * C(b) * C(c)", data=frame).fit()
        ref = anova_lm(fitted, typ=1)
        mapping = {"delay": "C(a)", "loss": "C(b)", "tokens": "C(c)",
                   "delay:loss": "C(a):C(b)",
                   "delay:loss:tokens": "C(a):C(b):C(c)"}
        for source, term in mapping.items():
            assert table.row(source).ss == pytest.approx(
                float(ref.loc[term, "sum_sq"]), rel=1e-8)
            assert table.row(source).f == pytest.approx(
                float(ref.loc[term, "F"]), rel=1e-8)

    def test_ss_decomposition(self):
        rng = np.random.default_rng(3)
        y = rng.normal(size=(2, 2, 2, 5))
        table = three_way_anova(observations_from_array(y))
        parts = sum(table.row(s).ss for s in EFFECTS) + table.row("error").ss
        assert parts == pytest.approx(table.row("total").ss, rel=1e-6)

    def test_df_accounting(self):
        y = np.random.default_rng(4).normal(size=(2, 2, 2, 3))
        table = three_way_anova(observations_from_array(y))
        assert sum(row.df for row in table.rows[:-1]) == table.n - 1
        assert table.row("error").df == table.n - 8

    def test_label_permutation_permutes_rows(self):
        rng = np.random.default_rng(5)
        y = rng.normal(size=(2, 2, 2, 3))
        y[:, 1, :, :] += 3.0
        base = three_way_anova(observations_from_array(y))
        swapped = three_way_anova([
            FactorialObservation(o.loss_level, o.delay_level, o.token_level,
                                 o.response_ms)
            for o in observations_from_array(y)])
        assert swapped.row("delay").ss == pytest.approx(base.row("loss").ss)
        assert swapped.row("loss").ss == pytest.approx(base.row("delay").ss)
        assert swapped.row("tokens").ss == pytest.approx(base.row("tokens").ss)
        assert swapped.row("delay:loss").ss == pytest.approx(
            base.row("delay:loss").ss)

    def test_unbalanced_rejected(self):
        y = np.random.default_rng(6).normal(size=(2, 2, 2, 3))
        obs = observations_from_array(y)
        with pytest.raises(AnovaError, match="unbalanced"):
            three_way_anova(obs[:-1])
        with pytest.raises(AnovaError, match="unbalanced"):
            three_way_anova([o for o in obs if o.delay_level == LOW])

    def test_single_replicate_rejected(self):
        y = np.random.default_rng(8).normal(size=(2, 2, 2, 1))
        with pytest.raises(AnovaError, match="replicates"):
            three_way_anova(observations_from_array(y))


class TestFactorialExperiment:
    def small_design(self):
        return FactorialDesign(ops_per_run=150, warmup_rows=10)

    def test_observation_accounting(self):
        obs = factorial_experiment(make_topology(service_us=400), replicates=3,
                                   seed=1, design=self.small_design())
        assert len(obs) == 24
        cells = {}
        for o in obs:
            cells.setdefault(o.levels(), 0)
            cells[o.levels()] += 1
        assert set(cells.values()) == {3}

    def test_deterministic(self):
        a = factorial_experiment(make_topology(service_us=400), 2, 5,
                                 design=self.small_design())
        b = factorial_experiment(make_topology(service_us=400), 2, 5,
                                 design=self.small_design())
        assert a == b

    def test_parallel_equals_serial(self):
        serial = factorial_experiment(make_topology(service_us=400), 2, 5,
                                      design=self.small_design(), jobs=1)
        parallel = factorial_experiment(make_topology(service_us=400), 2, 5,
                                        design=self.small_design(), jobs=4)
        assert serial == parallel

    def test_replicates_must_be_at_least_two(self):
        with pytest.raises(AnovaError, match="replicates"):
            factorial_experiment(make_topology(), 1, 0)
