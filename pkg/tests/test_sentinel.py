import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmguard.errormap import ErrorMap
from vlmguard.errors import InvalidInput
from vlmguard.sentinel import (
    DetectionMetrics, GateThresholds, VerdictClass, active_mask, anomaly_magnitude, compute_metrics,
    connected_components, dual_gate, energy_entropy, enhanced_concentration, local_concentration,
)

from oracles import cvar_oracle, flood_fill_components

losses_st = st.lists(st.floats(0, 1e3, allow_nan=False, allow_infinity=False), min_size=1, max_size=200)


class TestAnomalyMagnitude:
    def test_single_loss_is_itself(self):
        assert anomaly_magnitude([0.37]) == 0.37

    def test_constant(self):
        assert anomaly_magnitude([2.5] * 17) == 2.5

    def test_one_to_twenty(self):
        # sort-based oracle: VaR is the 19th smallest, tail {19, 20}
        assert cvar_oracle(range(1, 21), 0.95) == 19.5
        assert anomaly_magnitude(range(1, 21), 0.95) == 19.5

    def test_empty_raises(self):
        with pytest.raises(InvalidInput):
            anomaly_magnitude([])

    def test_negative_raises(self):
        with pytest.raises(InvalidInput):
            anomaly_magnitude([1.0, -0.1])

    @settings(max_examples=200, deadline=None)
    @given(losses_st, st.sampled_from([0.5, 0.9, 0.95, 0.99]))
    def test_matches_oracle(self, losses, alpha):
        assert anomaly_magnitude(losses, alpha) == pytest.approx(cvar_oracle(losses, alpha), rel=1e-12, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(losses_st, st.floats(0, 100), st.floats(0.01, 100))
    def test_covariance_and_mean_bound(self, losses, shift, scale):
        arr = np.array(losses)
        base = anomaly_magnitude(arr)
        assert anomaly_magnitude(arr + shift) == pytest.approx(base + shift, rel=1e-9, abs=1e-9)
        assert anomaly_magnitude(arr * scale) == pytest.approx(base * scale, rel=1e-9, abs=1e-9)
        assert base >= arr.mean() - 1e-9 * max(1.0, arr.mean())


class TestEntropy:
    def test_uniform_four(self):
        h, hn = energy_entropy(ErrorMap(np.full((2, 2), 3.0)))
        assert h == pytest.approx(math.log(4), abs=1e-15)
        assert hn == pytest.approx(1.0, abs=1e-15)

    def test_point_mass(self):
        g = np.zeros((3, 3))
        g[1, 2] = 4.0
        assert energy_entropy(ErrorMap(g)) == (0.0, 0.0)

    def test_half_quarter_quarter(self):
        # e = [0.5, 0.25, 0.25, 0]; mpmath: 1.5 ln 2
        h, hn = energy_entropy(ErrorMap(np.array([[2.0, 1.0], [1.0, 0.0]])))
        assert h == pytest.approx(1.0397207708399179, abs=1e-14)
        assert hn == pytest.approx(1.0397207708399179 / math.log(4), abs=1e-14)

    def test_degenerate_total(self):
        assert energy_entropy(ErrorMap(np.zeros((4, 4)))) == (math.log(16), 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.random((rng.integers(2, 15), rng.integers(2, 15))) ** rng.uniform(1, 8)
        h, hn = energy_entropy(ErrorMap(g))
        assert 0.0 <= h <= math.log(g.size)
        assert 0.0 <= hn <= 1.0


class TestActiveMask:
    def test_all_equal(self):
        assert not active_mask(ErrorMap(np.full((14, 14), 0.2))).any()

    def test_all_zero(self):
        assert not active_mask(ErrorMap(np.zeros((14, 14)))).any()

    def test_single_hot_block(self):
        g = np.zeros((14, 14))
        g[3, 5] = 1.0
        # hand oracle: mu + sigma = 1/196 + sqrt(1/196 - 1/196^2) ~= 0.0763
        assert 0.0763 < g.mean() + g.std() < 0.0764
        m = active_mask(ErrorMap(g))
        assert m.sum() == 1 and m[3, 5]


class TestComponents:
    def test_empty(self):
        assert connected_components(np.zeros((5, 5), dtype=bool)) == []

    def test_diagonal_pair(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1, 1] = m[2, 2] = True
        assert len(connected_components(m, 4)) == 2
        assert connected_components(m, 8) == [frozenset({(1, 1), (2, 2)})]

    def test_bad_connectivity(self):
        with pytest.raises(InvalidInput):
            connected_components(np.zeros((3, 3)), 6)

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_random_masks_match_flood_fill(self, connectivity, rng):
        for _ in range(50):
            m = rng.random((8, 8)) < rng.uniform(0.2, 0.7)
            assert set(connected_components(m, connectivity)) == flood_fill_components(m, connectivity)

    def test_ordering_by_loss_then_position(self):
        m = np.zeros((5, 5), dtype=bool)
        m[0, 0] = m[0, 4] = m[4, 0] = True
        losses = np.zeros((5, 5))
        losses[0, 0], losses[0, 4], losses[4, 0] = 1.0, 2.0, 1.0
        comps = connected_components(m, 8, losses)
        assert comps == [frozenset({(0, 4)}), frozenset({(0, 0)}), frozenset({(4, 0)})]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_independent_of_iteration_order(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.random((9, 9)) < 0.4
        losses = rng.random((9, 9))
        comps = connected_components(m, 8, losses)
        # transposing the input then mapping back must give the same partition and order
        back = [frozenset((c, r) for r, c in comp) for comp in connected_components(m.T, 8, losses.T)]
        assert set(back) == set(comps)
        sums = [sum(losses[b] for b in comp) for comp in comps]
        assert sums == sorted(sums, reverse=True)


class TestConcentration:
    def test_single_component_holds_all(self):
        g = np.zeros((4, 4))
        g[1:3, 1:3] = 1.0
        comps = connected_components(g > 0, 8, g)
        assert local_concentration(ErrorMap(g), comps) == 1.0

    def test_two_halves(self):
        g = np.zeros((4, 4))
        g[0, 0] = g[3, 3] = 1.0
        comps = connected_components(g > 0, 8, g)
        assert local_concentration(ErrorMap(g), comps) == 0.5

    def test_background_counts_in_denominator(self):
        g = np.zeros((5, 5))
        g[0, 0], g[4, 4], g[2, 0] = 3.0, 1.0, 1.0
        comps = [frozenset({(0, 0)}), frozenset({(4, 4)})]
        assert local_concentration(ErrorMap(g), comps) == pytest.approx(0.6, abs=1e-15)

    def test_degenerate_total(self):
        assert local_concentration(ErrorMap(np.zeros((3, 3))), [frozenset({(0, 0)})]) == 0.0

    def test_enhanced(self):
        assert enhanced_concentration(0.8, 0.0) == 0.8
        assert enhanced_concentration(0.3, 1.0, 0.8) == 0.0
        assert enhanced_concentration(0.5, 0.5, 0.8) == pytest.approx(0.28717458874925875, abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_enhanced_monotone(self, c, h1, h2):
        lo, hi = sorted((h1, h2))
        assert enhanced_concentration(c, hi) <= enhanced_concentration(c, lo) <= c


def _metrics(m, c):
    comp = frozenset({(0, 0)}) if c > 0 else frozenset()
    return DetectionMetrics(m, 0.0, 0.0, c, c, comp)


class TestDualGate:
    @pytest.mark.parametrize("m,c,expected", [
        (0.3, 0.01, VerdictClass.GLOBAL),
        (0.1, 0.05, VerdictClass.LOCAL),
        (0.1, 0.01, VerdictClass.CLEAN),
    ])
    def test_examples(self, m, c, expected):
        assert dual_gate(_metrics(m, c), GateThresholds()).cls is expected

    def test_boundaries_are_strict(self):
        th = GateThresholds()
        assert dual_gate(_metrics(0.2, 0.0), th).cls is VerdictClass.CLEAN
        assert dual_gate(_metrics(0.1, 0.03), th).cls is VerdictClass.CLEAN
        assert dual_gate(_metrics(0.25, 0.02), th).cls is VerdictClass.GLOBAL

    def test_attack_score(self):
        v = dual_gate(_metrics(0.1, 0.06), GateThresholds())
        assert v.attack_score == pytest.approx(2.0)

    def test_threshold_ordering_enforced(self):
        with pytest.raises(InvalidInput):
            GateThresholds(t_cc1=0.01, t_cc2=0.02)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    def test_scale_property(self, seed, s):
        rng = np.random.default_rng(seed)
        g = rng.random((14, 14)) ** 4 * 0.01
        g[rng.integers(14), rng.integers(14)] += rng.uniform(0, 0.5)
        th = GateThresholds(t_s=float(rng.uniform(1e-4, 0.1)))
        base = dual_gate(compute_metrics(ErrorMap(g), th), th)
        th_s = GateThresholds(t_s=th.t_s * s)
        scaled = dual_gate(compute_metrics(ErrorMap(g * s), th_s), th_s)
        assert base.cls is scaled.cls
        again = dual_gate(compute_metrics(ErrorMap(g), th), th)
        assert again == base
