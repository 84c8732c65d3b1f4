"""Ground-truth generation, reliable-rater rating models, and adversary strategies.

A WorldModel fixes the true item ratings r_star, the set of reliable raters,
their expected rating matrix a_star (monotone in r_star), and the strategy
the remaining raters use to fill in their cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .core import GroundTruth, ValidatedConfig, derive_rng, round_half_up


class StrategyError(ValueError):
    """Raised for invalid adversary-strategy parameters."""


class ProfileError(ValueError):
    """Raised when a rater profile would leave the [0, 1] rating range."""


@dataclass(frozen=True)
class RandomSpam:
    """Rates every assigned cell 1 with probability p_high, else 0."""

    p_high: float = 0.5


@dataclass(frozen=True)
class AntiCorrelated:
    """Rates each assigned item j with 1 - r_star[j]."""


@dataclass(frozen=True)
class SymmetricBlocks:
    """Block attack: adversary groups each claim a different item block.

    Raters are split into groups the size of the reliable set; group b rates
    the b-th block of beta_m items (blocks taken in descending r_star order,
    cyclically) with 1 and everything else with block_low.
    """

    block_low: float = 0.8


@dataclass(frozen=True)
class DenseHalfPositive:
    """Spam attack: adversary blocks each rate a shared random half of the
    items 1 and the rest 0. halves optionally pins the item sets per block."""

    block_size: int = 0  # 0 = derive 3*alpha*beta*n from the config
    halves: Optional[Tuple[Tuple[int, ...], ...]] = None


@dataclass(frozen=True)
class MirroredCopy:
    """Replays reliable raters' realized rows under a fixed column permutation."""

    perm_seed: int = 0


AdversaryStrategy = Union[
    RandomSpam, AntiCorrelated, SymmetricBlocks, DenseHalfPositive, MirroredCopy
]


@dataclass(frozen=True)
class WorldModel:
    """Everything the simulator needs to realize ratings for one experiment."""

    ground_truth: GroundTruth
    reliable_set: np.ndarray
    a_star: np.ndarray
    adversary: Optional[AdversaryStrategy]
    noise: str = "bernoulli"  # "bernoulli" or "noiseless"

    def __post_init__(self):
        reliable = np.asarray(self.reliable_set, dtype=int)
        a = np.asarray(self.a_star, dtype=float)
        if a.shape != (reliable.size, self.ground_truth.m):
            raise ValueError("a_star must be |reliable| x m")
        if np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("a_star entries must lie in [0, 1]")
        if self.noise not in ("bernoulli", "noiseless"):
            raise ValueError("noise must be 'bernoulli' or 'noiseless'")
        object.__setattr__(self, "reliable_set", reliable)
        object.__setattr__(self, "a_star", a)

    @property
    def n_reliable(self) -> int:
        return self.reliable_set.size


def generate_ground_truth(m: int, dist, rng: np.random.Generator, *,
                          beta_m: int) -> GroundTruth:
    """Draw r_star i.i.d. from dist and mark its beta_m largest entries.

    dist is "uniform", ("bernoulli", q), or ("two_level", lo, hi); the
    two-level variant places beta_m items at hi (random positions) and the
    rest at lo.
    """
    if dist == "uniform" or dist == ("uniform",):
        r = rng.uniform(0.0, 1.0, size=m)
    elif isinstance(dist, tuple) and dist[0] == "bernoulli":
        q = float(dist[1])
        if not 0.0 <= q <= 1.0:
            raise ValueError("bernoulli parameter must lie in [0, 1]")
        r = rng.binomial(1, q, size=m).astype(float)
    elif isinstance(dist, tuple) and dist[0] == "two_level":
        lo, hi = float(dist[1]), float(dist[2])
        if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0 and lo <= hi):
            raise ValueError("two_level needs 0 <= lo <= hi <= 1")
        r = np.full(m, lo)
        r[rng.choice(m, size=beta_m, replace=False)] = hi
    else:
        raise ValueError(f"unknown ground-truth distribution: {dist!r}")
    return GroundTruth.from_ratings(r, beta_m)


def affine_monotone_profile(r_star: np.ndarray, slopes: np.ndarray,
                            intercepts: np.ndarray) -> np.ndarray:
    """Expected-rating rows a[i] = intercepts[i] + slopes[i] * r_star.

    With slopes in [1/L, 1] the rows track r_star monotonically with zero
    slack. Raises ProfileError if any row would leave [0, 1].
    """
    r_star = np.asarray(r_star, dtype=float)
    slopes = np.atleast_1d(np.asarray(slopes, dtype=float))
    intercepts = np.atleast_1d(np.asarray(intercepts, dtype=float))
    if slopes.shape != intercepts.shape:
        raise ProfileError("slopes and intercepts must have equal length")
    if np.any(slopes <= 0.0):
        raise ProfileError("slopes must be positive")
    if np.any(intercepts < 0.0) or np.any(intercepts + slopes > 1.0 + 1e-12):
        raise ProfileError("profile leaves [0, 1]: need a >= 0 and a + b <= 1")
    return intercepts[:, None] + slopes[:, None] * r_star[None, :]


def random_affine_profile(r_star: np.ndarray, n_raters: int, L: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Affine profile with per-rater slopes drawn in [1/L, 1]."""
    slopes = rng.uniform(1.0 / L, 1.0, size=n_raters)
    intercepts = rng.uniform(0.0, 1.0, size=n_raters) * (1.0 - slopes)
    return affine_monotone_profile(r_star, slopes, intercepts)


def monotonicity_violation(r_star: np.ndarray, a_star: np.ndarray,
                           L: float) -> float:
    """Largest slack needed for a_star to be L-monotone in r_star.

    Exhaustive over ordered pairs (j, j'): returns
    max over r_star[j] >= r_star[j'] of r_star[j]-r_star[j'] - L*(a[j]-a[j']),
    so the rows are (L, eps0)-monotonic iff the result is <= eps0.
    """
    r = np.asarray(r_star, dtype=float)
    a = np.atleast_2d(np.asarray(a_star, dtype=float))
    ge = r[:, None] >= r[None, :]
    r_diff = r[:, None] - r[None, :]
    worst = -np.inf
    for row in a:
        slack = r_diff - L * (row[:, None] - row[None, :])
        worst = max(worst, float(slack[ge].max()))
    return worst


def check_monotonicity(r_star: np.ndarray, a_star: np.ndarray, L: float,
                       epsilon0: float, tol: float = 1e-9) -> None:
    viol = monotonicity_violation(r_star, a_star, L)
    if viol > epsilon0 + tol:
        raise ProfileError(
            f"profile violates ({L}, {epsilon0})-monotonicity by {viol - epsilon0:.3g}"
        )


def _group_of(ordinal: np.ndarray, group_size: int, n_total: int) -> np.ndarray:
    """Group index per ordinal; the remainder joins the last full group."""
    n_full = max(n_total // group_size, 1)
    return np.minimum(ordinal // group_size, n_full - 1)


def adversary_fill(strategy: AdversaryStrategy, plan, reliable_values: np.ndarray,
                   reliable_set: np.ndarray, ground_truth: GroundTruth,
                   rng: np.random.Generator) -> np.ndarray:
    """Values the adversarial raters submit on their assigned cells.

    Called after all reliable ratings are realized: reliable_values holds
    the realized reliable rows (zeros where unrated), so strategies may adapt
    to them and to the full assignment plan. Returns one row per rater not in
    reliable_set, in rater-index order, already zeroed outside the plan mask.
    """
    n = plan.mask.shape[0]
    m = ground_truth.m
    reliable_set = np.asarray(reliable_set, dtype=int)
    adv_rows = np.setdiff1d(np.arange(n), reliable_set)
    n_adv = adv_rows.size
    values = np.zeros((n_adv, m))
    if n_adv == 0:
        return values

    r_star = ground_truth.r_star
    t_star = ground_truth.t_star
    beta_m = int(t_star.sum())
    alpha_n = reliable_set.size
    ordinal = np.arange(n_adv)

    if isinstance(strategy, RandomSpam):
        if not 0.0 <= strategy.p_high <= 1.0:
            raise StrategyError("p_high must lie in [0, 1]")
        values = rng.binomial(1, strategy.p_high, size=(n_adv, m)).astype(float)
    elif isinstance(strategy, AntiCorrelated):
        values = np.tile(1.0 - r_star, (n_adv, 1))
    elif isinstance(strategy, SymmetricBlocks):
        if not 0.0 <= strategy.block_low <= 1.0:
            raise StrategyError("block_low must lie in [0, 1]")
        # Item blocks: consecutive beta_m-sized groups in descending r_star
        # order (block 0 is the true top set), taken cyclically.
        desc = np.argsort(-r_star, kind="stable")
        block = 1 + _group_of(ordinal, alpha_n, n_adv)
        values = np.full((n_adv, m), strategy.block_low)
        for a in range(n_adv):
            start = (block[a] * beta_m) % m
            own = desc[np.arange(start, start + beta_m) % m]
            values[a, own] = 1.0
    elif isinstance(strategy, DenseHalfPositive):
        size = strategy.block_size
        if size == 0:
            size = max(round_half_up(3.0 * (alpha_n / n) * (beta_m / m) * n), 1)
        if size < 1:
            raise StrategyError("block_size must be positive")
        block = _group_of(ordinal, size, n_adv)
        n_blocks = int(block.max()) + 1
        if strategy.halves is not None:
            if len(strategy.halves) < n_blocks:
                raise StrategyError(
                    f"need at least {n_blocks} item halves, got {len(strategy.halves)}"
                )
            halves = [np.asarray(h, dtype=int) for h in strategy.halves]
        else:
            halves = [rng.choice(m, size=m // 2, replace=False)
                      for _ in range(n_blocks)]
        for b in range(n_blocks):
            rows = np.flatnonzero(block == b)
            values[np.ix_(rows, halves[b])] = 1.0
    elif isinstance(strategy, MirroredCopy):
        perm = derive_rng(strategy.perm_seed, "mirror-perm").permutation(m)
        src = ordinal % reliable_values.shape[0]
        values = reliable_values[src][:, perm]
    else:
        raise StrategyError(f"unknown adversary strategy: {strategy!r}")

    return values * plan.mask[adv_rows]


def build_world(cfg: ValidatedConfig, rng: np.random.Generator, *,
                noise: str = "bernoulli", r_dist=None,
                profile: str = "auto") -> WorldModel:
    """Canonical world for a config: ground truth, reliable set, profile.

    The default r_star distribution depends on the adversary so the attack
    is pointed at a meaningful target: two-level (block_low, 1) under
    SymmetricBlocks, two-level (0, 1) under DenseHalfPositive, uniform
    otherwise. The reliable profile is the identity when L == 1 and a
    random-slope affine profile otherwise.
    """
    if r_dist is None:
        if isinstance(cfg.adversary, SymmetricBlocks):
            # match the attack's block contrast so the adversary groups are
            # genuinely indistinguishable without the requester's ratings
            r_dist = ("two_level", cfg.adversary.block_low, 1.0)
        elif isinstance(cfg.adversary, DenseHalfPositive):
            r_dist = ("two_level", 0.0, 1.0)
        else:
            r_dist = "uniform"
    gt = generate_ground_truth(cfg.m, r_dist, rng, beta_m=cfg.beta_m)

    reliable = np.sort(rng.choice(cfg.n, size=cfg.alpha_n, replace=False))
    if cfg.alpha_n < cfg.n and cfg.adversary is None:
        raise StrategyError("an adversary strategy is required when alpha < 1")

    if profile == "auto":
        profile = "identity" if cfg.L == 1.0 else "affine"
    if profile == "identity":
        a_star = np.tile(gt.r_star, (cfg.alpha_n, 1))
    elif profile == "affine":
        a_star = random_affine_profile(gt.r_star, cfg.alpha_n, cfg.L, rng)
    else:
        raise ValueError(f"unknown profile: {profile!r}")

    check_monotonicity(gt.r_star, a_star, cfg.L, cfg.epsilon0)
    return WorldModel(ground_truth=gt, reliable_set=reliable, a_star=a_star,
                      adversary=cfg.adversary, noise=noise)
