import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcrowd import (
    ConfigError,
    ExperimentConfig,
    GroundTruth,
    ObservedRatings,
    SelectionSet,
    derive_rng,
    feasibility_residuals,
    is_feasible,
    validate_config,
)
from qcrowd.core import round_half_up, top_indices

from conftest import make_config


class TestValidateConfig:
    def test_paper_scale_counts(self):
        cfg = make_config(n=10, m=12, alpha=2 / 5, beta=1 / 6)
        assert cfg.alpha_n == 4
        assert cfg.beta_m == 2

    def test_all_ones_fractions(self):
        cfg = make_config(n=4, m=4, alpha=1.0, beta=1.0, epsilon=0.5, k=4, k0=4)
        assert cfg.alpha_n == 4
        assert cfg.beta_m == 4
        assert cfg.rho == pytest.approx((2 / 0.5) * 4.0)

    def test_m_smaller_than_n_rejected(self):
        with pytest.raises(ConfigError, match="m must be at least n"):
            make_config(n=10, m=5)

    @pytest.mark.parametrize("field,value,msg", [
        ("alpha", 0.0, "alpha"),
        ("alpha", 1.5, "alpha"),
        ("beta", 0.0, "beta"),
        ("epsilon", 0.0, "epsilon"),
        ("delta", 1.0, "delta"),
        ("k", 0, "k"),
        ("k", 13, "k must be at most m"),
        ("k0", 0, "k0"),
        ("k0", 99, "k0 must be at most m"),
        ("L", 0.5, "L"),
        ("epsilon0", -0.1, "epsilon0"),
        ("n", 0, "n"),
    ])
    def test_rejections_name_the_constraint(self, field, value, msg):
        with pytest.raises(ConfigError, match=msg):
            make_config(**{field: value})

    def test_tiny_quantile_rejected(self):
        # round(beta * m) = 0
        with pytest.raises(ConfigError, match="beta"):
            make_config(beta=0.01)

    def test_rho_formula(self):
        cfg = make_config(n=10, m=12, alpha=0.4, beta=1 / 6, epsilon=0.2)
        expected = 2 / (0.4 * 0.2) * np.sqrt(0.4 * (1 / 6) * 10 * 12)
        assert cfg.rho == pytest.approx(expected)

    def test_round_half_up(self):
        assert round_half_up(2.5) == 3
        assert round_half_up(2.49) == 2
        assert round_half_up(2.0) == 2


class TestDeriveRng:
    def test_same_seed_label_identical(self):
        a = derive_rng(7, "assign").random(100)
        b = derive_rng(7, "assign").random(100)
        assert np.array_equal(a, b)

    def test_distinct_labels_differ(self):
        a = derive_rng(7, "assign").random(100)
        b = derive_rng(7, "self-ratings").random(100)
        assert not np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = derive_rng(7, "x").random(100)
        b = derive_rng(8, "x").random(100)
        assert not np.array_equal(a, b)


class TestGroundTruth:
    def test_marks_largest_entries(self):
        gt = GroundTruth.from_ratings([0.1, 0.9, 0.5, 0.9, 0.2], beta_m=2)
        assert list(gt.t_star) == [0, 1, 0, 1, 0]

    def test_ties_toward_smaller_index(self):
        gt = GroundTruth.from_ratings([0.5, 0.5, 0.5, 0.5], beta_m=2)
        assert list(gt.t_star) == [1, 1, 0, 0]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=40),
           st.integers(1, 5))
    def test_sort_reproduces_indicator(self, values, count):
        count = min(count, len(values))
        gt = GroundTruth.from_ratings(values, beta_m=count)
        expect = np.zeros(len(values), dtype=int)
        expect[np.argsort(-np.asarray(values), kind="stable")[:count]] = 1
        assert np.array_equal(gt.t_star, expect)
        assert gt.t_star.sum() == count

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GroundTruth.from_ratings([0.5, 1.2], beta_m=1)


class TestObservedRatings:
    def test_rejects_values_outside_mask(self):
        with pytest.raises(ValueError, match="unrated"):
            ObservedRatings(values=np.array([[0.5]]), mask=np.array([[0]]))

    def test_rejects_nonbinary_mask(self):
        with pytest.raises(ValueError, match="binary"):
            ObservedRatings(values=np.array([[0.5]]), mask=np.array([[2]]))


class TestSelectionSet:
    def test_binary_enforced(self):
        with pytest.raises(ValueError):
            SelectionSet(np.array([0.5, 1.0]))

    def test_size_and_indices(self):
        s = SelectionSet(np.array([1, 0, 1, 0]))
        assert s.size == 2
        assert list(s.indices()) == [0, 2]


class TestFeasibility:
    def test_residuals_zero_on_feasible(self):
        M = np.full((3, 4), 0.25)
        res = feasibility_residuals(M, beta_m=2, rho=10.0)
        assert res == {"box": 0.0, "row": 0.0, "nuc": 0.0}

    def test_box_violation_reported(self):
        M = np.array([[1.5, 0.0]])
        assert feasibility_residuals(M, 1, 10.0)["box"] == pytest.approx(0.5)
        assert feasibility_residuals(-M, 1, 10.0)["box"] == pytest.approx(1.5)

    def test_row_violation_reported(self):
        M = np.array([[1.0, 1.0, 1.0]])
        assert feasibility_residuals(M, 2, 10.0)["row"] == pytest.approx(1.0)

    def test_nuclear_violation_relative(self):
        M = np.diag([3.0, 1.0])
        res = feasibility_residuals(M, 4, 2.0)
        assert res["nuc"] == pytest.approx((4.0 - 2.0) / 2.0)

    def test_is_feasible_respects_tolerances(self):
        M = np.full((2, 3), 1.0 + 5e-7)
        assert is_feasible(M, 4, 100.0)
        assert not is_feasible(M, 4, 100.0, tol_feas=1e-8)


class TestTopIndices:
    def test_stable_ordering(self):
        assert list(top_indices([1.0, 3.0, 3.0, 2.0], 3)) == [1, 2, 3]
