"""Shared simplex-constrained quadratic-program solver.

Minimizes 0.5 a'Qa + c'a over the unit simplex with ADMM: the
quadratic step has a closed form through a factorization computed once
per Q, the splitting step is the exact simplex projection.  FCLS, the
kernel unmixer and the plug-and-play inner step all reduce to this
problem with different (Q, c).

Every per-iteration operation is column-separable and uses a fixed
reduction order, so solving N problems batched is bit-identical to
solving them one at a time; converged columns are frozen and no longer
updated.
"""

from __future__ import annotations

import numpy as np

from .core import project_columns


def _fixed_matmul(F: np.ndarray, X: np.ndarray) -> np.ndarray:
    """F @ X as a fixed-order sum of rank-1 updates (column-separable)."""
    out = F[:, 0:1] * X[0:1, :]
    for j in range(1, F.shape[1]):
        out = out + F[:, j : j + 1] * X[j : j + 1, :]
    return out


def solve_simplex_qp(
    Q: np.ndarray,
    C: np.ndarray,
    rho: float = 1.0,
    max_iters: int = 500,
    primal_tol: float = 1e-8,
    dual_tol: float = 1e-8,
    track_objective: bool = False,
):
    """Solve min 0.5 a'Qa + c'a s.t. a on the simplex, per column of C.

    Returns (A, iterations, converged, objective_trace) where A stacks
    the per-column solutions (always feasible: the splitting iterate is
    returned), iterations and converged are per-column arrays, and
    objective_trace lists 0.5 a'Qa + c'a per iteration when tracking is
    on (single-column use).
    """
    Q = np.asarray(Q, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or Q.shape != (C.shape[0], C.shape[0]):
        raise ValueError(f"shape mismatch: Q {Q.shape}, C {C.shape}")
    if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(C))):
        raise ValueError("non-finite entries in QP data")
    R, n = C.shape
    F = np.linalg.inv(Q + rho * np.eye(R))

    Z = np.full((R, n), 1.0 / R)
    U = np.zeros((R, n))
    A = Z.copy()
    done = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    trace: list[float] = []

    for _ in range(max_iters):
        if done.all():
            break
        RHS = rho * (Z - U) - C
        A_new = _fixed_matmul(F, RHS)
        Z_new = project_columns(A_new + U)
        r_primal = np.sqrt(np.sum((A_new - Z_new) ** 2, axis=0))
        s_dual = rho * np.sqrt(np.sum((Z_new - Z) ** 2, axis=0))
        upd = ~done
        A[:, upd] = A_new[:, upd]
        U[:, upd] = U[:, upd] + A_new[:, upd] - Z_new[:, upd]
        Z[:, upd] = Z_new[:, upd]
        iters[upd] += 1
        done |= upd & (r_primal <= primal_tol) & (s_dual <= dual_tol)
        if track_objective:
            z = Z[:, 0]
            trace.append(float(0.5 * z @ (Q @ z) + C[:, 0] @ z))

    return Z, iters, done.copy(), trace


def simplex_kkt_residual(Q: np.ndarray, c: np.ndarray, a: np.ndarray, active_tol: float = 1e-9) -> float:
    """Max-norm KKT violation of a candidate simplex-QP solution.

    With gradient g = Qa + c, the multiplier of the sum constraint is
    estimated from the free set; stationarity requires g_i = -nu on
    free coordinates and g_i >= -nu on active ones.  Feasibility gaps
    are folded into the returned residual.
    """
    a = np.asarray(a, dtype=np.float64)
    g = Q @ a + c
    free = a > active_tol
    if not np.any(free):
        free = a == a.max()
    nu = -float(np.mean(g[free]))
    res = abs(float(a.sum()) - 1.0)
    res = max(res, float(-min(a.min(), 0.0)))
    res = max(res, float(np.max(np.abs(g[free] + nu))))
    active = ~free
    if np.any(active):
        res = max(res, float(np.max(np.maximum(-(g[active] + nu), 0.0))))
    return res
