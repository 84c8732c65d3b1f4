"""Recovery of the per-rater quantile matrix.

Maximizes <A, M> over {0 <= M_ij <= 1, row sums <= beta_m, ||M||_* <= rho}
by projected subgradient ascent, with Dykstra's alternating projections
between the per-row capped box-simplex and the nuclear-norm ball.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import (
    QuantileMatrix,
    ValidatedConfig,
    feasibility_residuals,
)


class SvdFailure(RuntimeError):
    """Raised when the singular value decomposition does not converge."""


class NotConverged(RuntimeError):
    """Stop criterion unmet at max_iters. Carries the best iterate and its
    report so the caller can decide whether to proceed with it."""

    def __init__(self, matrix: QuantileMatrix, report: "SolveReport"):
        super().__init__(
            f"solver hit max_iters={report.iterations} without meeting the "
            f"stop criterion (objective {report.objective:.6g})"
        )
        self.matrix = matrix
        self.report = report


@dataclass(frozen=True)
class SolverSettings:
    """Knobs for the projected-subgradient solve.

    eta0 is the base step size (None = 1 / estimated operator norm of the
    ratings matrix); the step at iteration t is eta0 / sqrt(t).
    """

    max_iters: int = 2000
    eta0: Optional[float] = None
    dykstra_iters: int = 30
    stop_rel_obj: float = 1e-6
    stop_window: int = 25
    svd_rank_cap: Optional[int] = None

    def validate(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.eta0 is not None and self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.dykstra_iters < 1:
            raise ValueError("dykstra_iters must be positive")
        if self.stop_rel_obj <= 0:
            raise ValueError("stop_rel_obj must be positive")
        if self.stop_window < 1:
            raise ValueError("stop_window must be positive")
        if self.svd_rank_cap is not None and self.svd_rank_cap < 1:
            raise ValueError("svd_rank_cap must be positive")


@dataclass(frozen=True)
class SolveReport:
    """Diagnostics for one solve."""

    iterations: int
    objective: float
    residual_box: float
    residual_row: float
    residual_nuc: float
    wall_time: float
    converged: bool
    objective_trace: Tuple[float, ...] = ()


def _project_rows(M: np.ndarray, cap: float) -> np.ndarray:
    """Exact Euclidean projection of every row onto {x in [0,1]^m: sum x <= cap}.

    Rows whose clipped sum already satisfies the cap are just clipped; the
    rest get a bisected Lagrange shift theta so that sum clip(v - theta, 0, 1)
    hits the cap (sum tolerance ~1e-10).
    """
    M = np.asarray(M, dtype=float)
    X = np.clip(M, 0.0, 1.0)
    over = X.sum(axis=1) > cap
    if not np.any(over):
        return X
    V = M[over]
    lo = np.zeros(V.shape[0])
    hi = V.max(axis=1)  # at theta = max(v) the shifted sum is 0 <= cap
    width_floor = 1e-13 * (1.0 + float(hi.max()))
    W = np.empty_like(V)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        np.subtract(V, mid[:, None], out=W)
        np.clip(W, 0.0, 1.0, out=W)
        too_big = W.sum(axis=1) > cap
        lo = np.where(too_big, mid, lo)
        hi = np.where(too_big, hi, mid)
        if float((hi - lo).max()) <= width_floor:
            break
    # theta = hi keeps the shifted sum at or below the cap
    np.subtract(V, hi[:, None], out=W)
    np.clip(W, 0.0, 1.0, out=W)
    X[over] = W
    return X


def project_capped_box_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Exact Euclidean projection of v onto {x in [0,1]^m : sum x <= cap}."""
    v = np.asarray(v, dtype=float)
    return _project_rows(v[None, :], cap)[0]


def _fix_svd_signs(U: np.ndarray, Vt: np.ndarray) -> None:
    """Make the largest-magnitude entry of each left singular vector positive."""
    lead = np.abs(U).argmax(axis=0)
    flip = U[lead, np.arange(U.shape[1])] < 0
    U[:, flip] *= -1.0
    Vt[flip] *= -1.0


def _simplex_threshold(s: np.ndarray, radius: float) -> np.ndarray:
    """Project a descending non-negative vector onto {x >= 0, sum x = radius}
    via the sorted-threshold rule."""
    css = np.cumsum(s)
    idx = np.arange(1, s.size + 1)
    positive = s - (css - radius) / idx > 0
    rank = int(np.max(np.flatnonzero(positive))) + 1
    theta = (css[rank - 1] - radius) / rank
    return np.maximum(s - theta, 0.0)


def nuclear_norm_within(M: np.ndarray, bound: float) -> bool:
    """True when ||M||_* <= bound, certified cheaply when possible.

    sqrt(rank) * ||M||_F upper-bounds the nuclear norm, which skips the SVD
    for comfortably interior points.
    """
    fro = float(np.linalg.norm(M))
    if math.sqrt(min(M.shape)) * fro <= bound:
        return True
    return float(_svd_values(M).sum()) <= bound


def _svd_values(M: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SvdFailure("singular value decomposition did not converge") from exc


def project_nuclear_ball(M: np.ndarray, rho: float,
                         rank_cap: Optional[int] = None) -> np.ndarray:
    """Euclidean projection of M onto the nuclear-norm ball of radius rho.

    Projects the singular values onto the l1 ball (sorted-threshold rule)
    and reconstructs; M is returned unchanged when already inside.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    M = np.asarray(M, dtype=float)
    if math.sqrt(min(M.shape)) * float(np.linalg.norm(M)) <= rho:
        return M
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure("singular value decomposition did not converge") from exc
    if float(s.sum()) <= rho:
        return M
    _fix_svd_signs(U, Vt)
    s_proj = _simplex_threshold(s, rho)
    if rank_cap is not None:
        s_proj = s_proj.copy()
        s_proj[rank_cap:] = 0.0
    return (U * s_proj) @ Vt


def dykstra_project(M: np.ndarray, cap: float, rho: float, max_sweeps: int,
                    tol: float = 1e-9, rank_cap: Optional[int] = None) -> np.ndarray:
    """Approximate Euclidean projection onto the intersection of the per-row
    capped box-simplex and the nuclear ball, by Dykstra's alternating
    projections with correction terms."""
    x = np.asarray(M, dtype=float)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_sweeps):
        y = _project_rows(x + p, cap)
        p = x + p - y
        x = project_nuclear_ball(y + q, rho, rank_cap)
        q = y + q - x
        if float(np.linalg.norm(x - y)) <= tol * (1.0 + float(np.linalg.norm(x))):
            break
    return x


def greedy_row_oracle(values: np.ndarray, cap: int) -> np.ndarray:
    """Row-separable maximizer: per row, 1 on the cap largest strictly
    positive entries (ties toward smaller index), else 0.

    Exact optimum of the program when the nuclear constraint is inactive.
    """
    A = np.asarray(values, dtype=float)
    order = np.argsort(-A, axis=1, kind="stable")
    rank = np.empty_like(order)
    rows = np.arange(A.shape[0])[:, None]
    rank[rows, order] = np.arange(A.shape[1])[None, :]
    return ((rank < cap) & (A > 0.0)).astype(float)


def _initial_point(n: int, m: int, beta: float, cap: int, rho: float) -> np.ndarray:
    """beta * ones when that is feasible for all three constraints, else zeros."""
    if (beta * m <= cap) and (beta <= 1.0) and (beta * math.sqrt(n * m) <= rho):
        return np.full((n, m), beta)
    return np.zeros((n, m))


def _polish(M: np.ndarray, cap: float, rho: float) -> np.ndarray:
    """Make box and row-sum constraints exact, keeping the nuclear norm
    within its declared relative slack."""
    X = _project_rows(M, cap)
    for _ in range(50):
        if nuclear_norm_within(X, rho * (1.0 + 5e-5)):
            break
        X = _project_rows(project_nuclear_ball(X, rho), cap)
    return X


def solve_recover_M(ratings, cfg: ValidatedConfig, *,
                    rho_scale: float = 1.0) -> Tuple[QuantileMatrix, SolveReport]:
    """Solve the constrained linear program for the quantile matrix.

    Projected subgradient ascent M <- Pi(M + eta_t * A) from beta * ones,
    where Pi is the Dykstra projection onto the feasible set; returns the
    best iterate by objective, polished so box/row-sum constraints hold
    exactly. Raises NotConverged (result attached) when the windowed
    relative-improvement stop criterion is unmet at max_iters.
    """
    settings = cfg.solver
    A = np.asarray(ratings.values, dtype=float)
    n, m = A.shape
    cap = cfg.beta_m
    rho = cfg.rho * rho_scale
    start = time.perf_counter()

    M = _initial_point(n, m, cfg.beta, cap, rho)
    if settings.eta0 is not None:
        eta0 = settings.eta0
    else:
        sigma1 = float(_svd_values(A)[0]) if A.any() else 0.0
        eta0 = 1.0 / sigma1 if sigma1 > 1e-12 else 1.0

    best_obj = -math.inf
    best_M = M
    trace = []
    converged = False
    iterations = 0
    for t in range(1, settings.max_iters + 1):
        iterations = t
        eta = eta0 / math.sqrt(t)
        M = dykstra_project(M + eta * A, cap, rho, settings.dykstra_iters,
                            rank_cap=settings.svd_rank_cap)
        obj = float(np.vdot(A, M))
        if obj > best_obj:
            best_obj = obj
            best_M = M
        trace.append(best_obj)
        w = settings.stop_window
        if t > w and trace[-1] - trace[-1 - w] <= settings.stop_rel_obj * max(
                1.0, abs(trace[-1])):
            converged = True
            break

    final = _polish(best_M, cap, rho)
    res = feasibility_residuals(final, cap, rho)
    report = SolveReport(
        iterations=iterations,
        objective=float(np.vdot(A, final)),
        residual_box=res["box"],
        residual_row=res["row"],
        residual_nuc=res["nuc"],
        wall_time=time.perf_counter() - start,
        converged=converged,
        objective_trace=tuple(trace),
    )
    matrix = QuantileMatrix(final)
    if not converged:
        raise NotConverged(matrix, report)
    return matrix, report
