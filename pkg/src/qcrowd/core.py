"""Shared domain types, parameter validation, and seeded random-stream plumbing."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from .solver import SolverSettings
    from .world import AdversaryStrategy

# Feasibility slack shared by the solver and every post-solve assertion.
TOL_FEAS = 1e-6  # absolute, box and row-sum constraints
TOL_NUC = 1e-4   # relative, nuclear-norm bound


class ConfigError(ValueError):
    """Raised when an experiment configuration violates a constraint."""


def round_half_up(x: float) -> int:
    """Round to the nearest integer, with .5 going up."""
    return int(math.floor(x + 0.5))


def derive_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Deterministic child generator for (seed, label).

    The same pair always yields the same stream; distinct labels (or seeds)
    yield streams with no shared state. The label is folded in through a
    SHA-256 digest so stream separation does not depend on label length.
    """
    digest = hashlib.sha256(stream_label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8)]
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *words]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class ExperimentConfig:
    """All problem parameters for one experiment.

    n raters rate m items (m >= n). A fraction alpha of raters is reliable,
    the target is the set of the beta-fraction best items, epsilon is the
    target accuracy and delta the allowed failure probability. k and k0 are
    the per-rater and requester rating budgets; L and epsilon0 parametrize
    how faithfully reliable raters track the requester's true ranking.
    """

    n: int
    m: int
    alpha: float
    beta: float
    epsilon: float
    delta: float
    k: int
    k0: int
    L: float = 1.0
    epsilon0: float = 0.0
    seed: int = 0
    adversary: Optional["AdversaryStrategy"] = None
    solver: Optional["SolverSettings"] = None


@dataclass(frozen=True)
class ValidatedConfig:
    """ExperimentConfig after validation, with derived integers precomputed.

    alpha_n and beta_m are the round-half-up integer counts used everywhere;
    rho is the nuclear-norm bound 2/(alpha*epsilon) * sqrt(alpha*beta*n*m).
    """

    n: int
    m: int
    alpha: float
    beta: float
    epsilon: float
    delta: float
    k: int
    k0: int
    L: float
    epsilon0: float
    seed: int
    adversary: Optional["AdversaryStrategy"]
    solver: "SolverSettings"
    alpha_n: int = field(default=0)
    beta_m: int = field(default=0)
    rho: float = field(default=0.0)


def validate_config(cfg: ExperimentConfig) -> ValidatedConfig:
    """Check every config constraint and precompute alpha_n, beta_m, rho.

    Raises ConfigError naming the first violated constraint.
    """
    def is_int(x) -> bool:
        return isinstance(x, (int, np.integer)) and not isinstance(x, bool)

    if not is_int(cfg.n) or cfg.n < 1:
        raise ConfigError("n must be a positive integer")
    if not is_int(cfg.m) or cfg.m < 1:
        raise ConfigError("m must be a positive integer")
    if cfg.m < cfg.n:
        raise ConfigError("m must be at least n")
    if not 0.0 < cfg.alpha <= 1.0:
        raise ConfigError("alpha must lie in (0, 1]")
    if not 0.0 < cfg.beta <= 1.0:
        raise ConfigError("beta must lie in (0, 1]")
    if not 0.0 < cfg.epsilon <= 1.0:
        raise ConfigError("epsilon must lie in (0, 1]")
    if not 0.0 < cfg.delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    if not is_int(cfg.k) or cfg.k < 1:
        raise ConfigError("k must be a positive integer")
    if cfg.k > cfg.m:
        raise ConfigError("k must be at most m")
    if not is_int(cfg.k0) or cfg.k0 < 1:
        raise ConfigError("k0 must be a positive integer")
    if cfg.k0 > cfg.m:
        raise ConfigError("k0 must be at most m")
    if cfg.L < 1.0:
        raise ConfigError("L must be at least 1")
    if cfg.epsilon0 < 0.0:
        raise ConfigError("epsilon0 must be non-negative")

    alpha_n = round_half_up(cfg.alpha * cfg.n)
    beta_m = round_half_up(cfg.beta * cfg.m)
    if alpha_n < 1:
        raise ConfigError("round(alpha * n) must be at least 1")
    if beta_m < 1:
        raise ConfigError("round(beta * m) must be at least 1")

    from .solver import SolverSettings  # deferred: solver imports core

    solver = cfg.solver if cfg.solver is not None else SolverSettings()
    solver.validate()

    rho = (2.0 / (cfg.alpha * cfg.epsilon)) * math.sqrt(
        cfg.alpha * cfg.beta * cfg.n * cfg.m
    )
    return ValidatedConfig(
        n=int(cfg.n), m=int(cfg.m), alpha=float(cfg.alpha), beta=float(cfg.beta),
        epsilon=float(cfg.epsilon), delta=float(cfg.delta), k=int(cfg.k),
        k0=int(cfg.k0), L=float(cfg.L), epsilon0=float(cfg.epsilon0),
        seed=int(cfg.seed), adversary=cfg.adversary, solver=solver,
        alpha_n=alpha_n, beta_m=beta_m, rho=rho,
    )


def top_indices(values: np.ndarray, count: int) -> np.ndarray:
    """Indices of the count largest entries, ties broken toward smaller index."""
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    return order[:count]


@dataclass(frozen=True)
class GroundTruth:
    """True rating vector r_star in [0,1]^m and its binary top-set indicator."""

    r_star: np.ndarray
    t_star: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r_star, dtype=float)
        t = np.asarray(self.t_star)
        if r.ndim != 1 or t.shape != r.shape:
            raise ValueError("r_star and t_star must be vectors of equal length")
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("r_star entries must lie in [0, 1]")
        if not np.isin(t, (0, 1)).all():
            raise ValueError("t_star must be binary")
        object.__setattr__(self, "r_star", r)
        object.__setattr__(self, "t_star", t.astype(np.int8))

    @classmethod
    def from_ratings(cls, r_star: np.ndarray, beta_m: int) -> "GroundTruth":
        """Build the indicator of the beta_m largest entries of r_star."""
        r_star = np.asarray(r_star, dtype=float)
        t = np.zeros(r_star.shape[0], dtype=np.int8)
        t[top_indices(r_star, beta_m)] = 1
        return cls(r_star=r_star, t_star=t)

    @property
    def m(self) -> int:
        return self.r_star.shape[0]


@dataclass(frozen=True)
class ObservedRatings:
    """Observed rater-by-item matrix with its observation mask.

    Unrated cells hold 0; after pruning every row and column of the mask
    has at most 2k ones.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        mk = np.asarray(self.mask)
        if v.shape != mk.shape or v.ndim != 2:
            raise ValueError("values and mask must be matrices of equal shape")
        if not np.isin(mk, (0, 1)).all():
            raise ValueError("mask must be binary")
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("values must lie in [0, 1]")
        if np.any(v[mk == 0] != 0.0):
            raise ValueError("values must be 0 on unrated cells")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", mk.astype(np.int8))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class RequesterRatings:
    """The requester's two independent noisy rating passes over the items."""

    r_tilde: np.ndarray
    mask: np.ndarray
    r_tilde_prime: np.ndarray
    mask_prime: np.ndarray

    def __post_init__(self):
        for vec, mk in ((self.r_tilde, self.mask),
                        (self.r_tilde_prime, self.mask_prime)):
            vec = np.asarray(vec, dtype=float)
            mk = np.asarray(mk)
            if vec.shape != mk.shape or vec.ndim != 1:
                raise ValueError("rating vector and mask must be equal-length vectors")
            if np.any(vec[mk == 0] != 0.0):
                raise ValueError("ratings must be 0 outside the mask")
            if np.any(vec < 0.0) or np.any(vec > 1.0):
                raise ValueError("ratings must lie in [0, 1]")


@dataclass(frozen=True)
class QuantileMatrix:
    """Recovered per-rater quantile-indicator matrix (feasible up to tolerances)."""

    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2:
            raise ValueError("M must be a matrix")
        object.__setattr__(self, "M", M)


def feasibility_residuals(M: np.ndarray, beta_m: int, rho: float) -> dict:
    """Constraint residuals of M: box (absolute), row-sum (absolute),
    nuclear norm (relative to rho). All are 0 for a feasible matrix."""
    M = np.asarray(M, dtype=float)
    box = max(0.0, float(np.max(-M, initial=0.0)), float(np.max(M - 1.0, initial=0.0)))
    row = max(0.0, float(np.max(M.sum(axis=1) - beta_m, initial=0.0)))
    nuclear = float(np.linalg.svd(M, compute_uv=False).sum())
    nuc = max((nuclear - rho) / rho, 0.0)
    return {"box": box, "row": row, "nuc": nuc}


def is_feasible(M: np.ndarray, beta_m: int, rho: float,
                tol_feas: float = TOL_FEAS, tol_nuc: float = TOL_NUC) -> bool:
    res = feasibility_residuals(M, beta_m, rho)
    return res["box"] <= tol_feas and res["row"] <= tol_feas and res["nuc"] <= tol_nuc


@dataclass(frozen=True)
class SelectionSet:
    """Binary item indicator returned by the recovery pipeline."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.ndim != 1 or not np.isin(t, (0, 1)).all():
            raise ValueError("selection must be a binary vector")
        object.__setattr__(self, "t", t.astype(np.int8))

    @property
    def size(self) -> int:
        return int(self.t.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.t)
