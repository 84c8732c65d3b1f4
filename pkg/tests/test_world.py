import numpy as np
import pytest

from qcrowd import (
    AntiCorrelated,
    DenseHalfPositive,
    GroundTruth,
    ProfileError,
    RandomSpam,
    StrategyError,
    SymmetricBlocks,
    WorldModel,
    affine_monotone_profile,
    build_world,
    derive_rng,
    generate_ground_truth,
)
from qcrowd.assignment import AssignmentPlan
from qcrowd.world import (
    adversary_fill,
    check_monotonicity,
    monotonicity_violation,
    random_affine_profile,
)

from conftest import make_config


def full_plan(n, m):
    return AssignmentPlan(mask=np.ones((n, m), dtype=np.int8),
                          pruned_rows=0, pruned_cols=0)


class TestGenerateGroundTruth:
    def test_two_level_marks_the_high_items(self):
        gt = generate_ground_truth(12, ("two_level", 0.0, 1.0),
                                   derive_rng(0, "gt"), beta_m=2)
        assert gt.t_star.sum() == 2
        assert np.all(gt.r_star[gt.t_star == 1] == 1.0)
        assert np.all(gt.r_star[gt.t_star == 0] == 0.0)

    def test_uniform_threshold_is_order_statistic(self):
        gt = generate_ground_truth(40, "uniform", derive_rng(1, "gt"), beta_m=7)
        cut = np.sort(gt.r_star)[::-1][6]
        assert np.all(gt.r_star[gt.t_star == 1] >= cut)
        assert np.all(gt.r_star[gt.t_star == 0] <= cut)

    def test_bernoulli_count_fixed_regardless_of_draw(self):
        for seed in range(10):
            gt = generate_ground_truth(12, ("bernoulli", 0.5),
                                       derive_rng(seed, "gt"), beta_m=2)
            assert gt.t_star.sum() == 2

    def test_unknown_dist_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            generate_ground_truth(5, "triangular", derive_rng(0, "gt"), beta_m=1)


class TestAffineProfile:
    def test_binary_accuracy_three_fifths_example(self):
        # a rater agreeing with binary truth 3/5 of the time has expected
        # ratings 2/5 + (1/5) r and tracks the truth with L = 5, slack 0
        r = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
        a = affine_monotone_profile(r, slopes=[0.2], intercepts=[0.4])
        assert np.allclose(a, 0.4 + 0.2 * r)
        assert monotonicity_violation(r, a, L=5.0) <= 1e-12

    def test_identity_profile(self):
        r = np.linspace(0, 1, 9)
        a = affine_monotone_profile(r, slopes=[1.0], intercepts=[0.0])
        assert np.allclose(a[0], r)
        assert monotonicity_violation(r, a, L=1.0) <= 1e-12

    def test_random_slopes_are_monotone_with_zero_slack(self):
        rng = derive_rng(2, "profile")
        r = rng.random(200)
        L = 3.0
        a = random_affine_profile(r, n_raters=12, L=L, rng=rng)
        assert monotonicity_violation(r, a, L) <= 1e-12
        assert np.all(a >= 0.0) and np.all(a <= 1.0)

    def test_profile_leaving_unit_interval_rejected(self):
        with pytest.raises(ProfileError):
            affine_monotone_profile(np.array([1.0]), slopes=[0.8], intercepts=[0.4])
        with pytest.raises(ProfileError):
            affine_monotone_profile(np.array([1.0]), slopes=[0.5], intercepts=[-0.1])

    def test_violation_matches_brute_force(self):
        rng = derive_rng(3, "prof")
        r = rng.random(15)
        a = rng.random((2, 15))
        L = 2.0
        worst = -np.inf
        for row in a:
            for j in range(15):
                for jp in range(15):
                    if r[j] >= r[jp]:
                        worst = max(worst, r[j] - r[jp] - L * (row[j] - row[jp]))
        assert monotonicity_violation(r, a, L) == pytest.approx(worst)

    def test_check_monotonicity_raises_on_violation(self):
        r = np.array([1.0, 0.0])
        a = np.array([[0.0, 1.0]])  # decreasing in r
        with pytest.raises(ProfileError, match="monotonicity"):
            check_monotonicity(r, a, L=1.0, epsilon0=0.0)


def _descending_gt(m, beta_m, lo=0.8):
    # strictly descending two-level-ish ratings: item blocks in index order
    levels = np.concatenate([np.ones(beta_m), np.full(m - beta_m, lo)])
    r = 0.05 + 0.9 * levels - np.arange(m) * (0.04 / m)  # tie-break, stay in [0,1]
    return GroundTruth.from_ratings(r, beta_m)


class TestSymmetricBlocks:
    def test_block_matrix_structure(self):
        # alpha = beta, n = m: full matrix is J on the diagonal blocks and
        # block_low off the diagonal
        n = m = 8
        block = 2
        eps = 0.25
        gt = _descending_gt(m, block, lo=1 - eps)
        reliable = np.arange(block)
        plan = full_plan(n, m)
        fill = adversary_fill(SymmetricBlocks(block_low=1 - eps), plan,
                              np.tile(gt.r_star, (block, 1)), reliable, gt,
                              derive_rng(0, "adv"))
        reliable_rows = np.where(gt.t_star[None, :] == 1, 1.0, 1 - eps)
        A = np.vstack([np.tile(reliable_rows, (block, 1)), fill])
        for rb in range(4):
            for ib in range(4):
                sub = A[2 * rb:2 * rb + 2, 2 * ib:2 * ib + 2]
                want = 1.0 if rb == ib else 1 - eps
                assert np.allclose(sub, want), (rb, ib)

    def test_invariant_under_simultaneous_block_permutation(self):
        n = m = 8
        gt = _descending_gt(m, 2)
        reliable = np.arange(2)
        plan = full_plan(n, m)
        fill = adversary_fill(SymmetricBlocks(block_low=0.75), plan,
                              np.tile(gt.r_star, (2, 1)), reliable, gt,
                              derive_rng(0, "adv"))
        reliable_rows = np.where(gt.t_star[None, :] == 1, 1.0, 0.75)
        A = np.vstack([np.tile(reliable_rows, (2, 1)), fill])
        # swap adversary blocks 1 and 2 together with item blocks 1 and 2
        rows = np.array([0, 1, 4, 5, 2, 3, 6, 7])
        cols = np.array([0, 1, 4, 5, 2, 3, 6, 7])
        assert np.array_equal(A[rows][:, cols], A)

    def test_remainder_raters_join_last_block(self):
        n, m = 10, 12
        gt = _descending_gt(m, 2)
        reliable = np.arange(3)
        plan = full_plan(n, m)
        fill = adversary_fill(SymmetricBlocks(block_low=0.5), plan,
                              np.tile(gt.r_star, (3, 1)), reliable, gt,
                              derive_rng(0, "adv"))
        # 7 adversaries in groups of 3: [0,1,2], [3,4,5], remainder 6 joins last
        assert np.array_equal(fill[6], fill[5])

    def test_bad_parameter_rejected(self):
        gt = _descending_gt(6, 2)
        with pytest.raises(StrategyError):
            adversary_fill(SymmetricBlocks(block_low=1.5), full_plan(4, 6),
                           np.tile(gt.r_star, (2, 1)), np.arange(2), gt,
                           derive_rng(0, "adv"))


# 0-indexed halves of the 10x12 spam example: three blocks of two raters,
# each rating a shared half of the items 1 and the rest 0
PAPER_HALVES = ((1, 4, 8, 9, 10, 11), (1, 2, 4, 5, 7, 10), (0, 2, 3, 6, 9, 11))
PAPER_BAD_ROWS = np.array([
    [0, 1, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1],
    [0, 1, 0, 0, 1, 0, 0, 0, 1, 1, 1, 1],
    [0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 0],
    [0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 0],
    [1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1],
    [1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1],
], dtype=float)


class TestDenseHalfPositive:
    def test_reproduces_documented_spam_pattern(self):
        n, m = 10, 12
        gt = _descending_gt(m, 2, lo=0.0)
        reliable = np.arange(4)  # alpha = 2/5
        fill = adversary_fill(DenseHalfPositive(halves=PAPER_HALVES),
                              full_plan(n, m), np.tile(gt.r_star, (4, 1)),
                              reliable, gt, derive_rng(0, "adv"))
        assert np.array_equal(fill, PAPER_BAD_ROWS)

    def test_default_block_size_and_shared_halves(self):
        n, m = 10, 12
        gt = _descending_gt(m, 2, lo=0.0)
        reliable = np.arange(4)
        fill = adversary_fill(DenseHalfPositive(), full_plan(n, m),
                              np.tile(gt.r_star, (4, 1)), reliable, gt,
                              derive_rng(1, "adv"))
        # derived block size 3 * alpha * beta * n = 2: three blocks of two
        for b in range(3):
            assert np.array_equal(fill[2 * b], fill[2 * b + 1])
            assert fill[2 * b].sum() == m // 2
        assert not np.array_equal(fill[0], fill[2])

    def test_too_few_halves_rejected(self):
        gt = _descending_gt(12, 2, lo=0.0)
        with pytest.raises(StrategyError, match="halves"):
            adversary_fill(DenseHalfPositive(halves=((0, 1),)),
                           full_plan(10, 12), np.tile(gt.r_star, (4, 1)),
                           np.arange(4), gt, derive_rng(0, "adv"))


class TestSimpleStrategies:
    def test_anti_correlated(self):
        gt = _descending_gt(6, 2)
        fill = adversary_fill(AntiCorrelated(), full_plan(4, 6),
                              np.tile(gt.r_star, (2, 1)), np.arange(2), gt,
                              derive_rng(0, "adv"))
        assert np.allclose(fill, 1.0 - gt.r_star[None, :])

    def test_random_spam_mean(self):
        gt = _descending_gt(2000, 100, lo=0.3)
        fill = adversary_fill(RandomSpam(p_high=0.3), full_plan(4, 2000),
                              np.tile(gt.r_star, (2, 1)), np.arange(2), gt,
                              derive_rng(0, "adv"))
        assert set(np.unique(fill)) <= {0.0, 1.0}
        sigma = np.sqrt(0.3 * 0.7 / fill.size)
        assert abs(fill.mean() - 0.3) <= 3 * sigma

    def test_values_zeroed_outside_plan(self):
        gt = _descending_gt(6, 2)
        mask = np.zeros((4, 6), dtype=np.int8)
        mask[:, :3] = 1
        plan = AssignmentPlan(mask=mask, pruned_rows=0, pruned_cols=0)
        fill = adversary_fill(AntiCorrelated(), plan,
                              np.tile(gt.r_star, (2, 1)), np.arange(2), gt,
                              derive_rng(0, "adv"))
        assert np.all(fill[:, 3:] == 0.0)


class TestBuildWorld:
    def test_requires_strategy_when_alpha_below_one(self):
        cfg = make_config(alpha=0.5, adversary=None)
        with pytest.raises(StrategyError):
            build_world(cfg, derive_rng(0, "world"))

    def test_symmetric_blocks_default_ground_truth(self):
        cfg = make_config(adversary=SymmetricBlocks(block_low=0.7))
        world = build_world(cfg, derive_rng(0, "world"))
        assert set(np.unique(world.ground_truth.r_star)) == {0.7, 1.0}

    def test_affine_profile_used_when_L_above_one(self):
        cfg = make_config(alpha=1.0, L=2.0)
        world = build_world(cfg, derive_rng(1, "world"))
        assert monotonicity_violation(world.ground_truth.r_star,
                                      world.a_star, 2.0) <= 1e-12
        # rows genuinely differ from the truth
        assert not np.allclose(world.a_star[0], world.ground_truth.r_star)

    def test_world_model_validates_a_star(self):
        gt = _descending_gt(6, 2)
        with pytest.raises(ValueError):
            WorldModel(ground_truth=gt, reliable_set=np.arange(2),
                       a_star=np.full((2, 6), 1.5), adversary=None)
