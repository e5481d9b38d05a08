"""Classical inversion: FCLS abundance estimation and blind regularized NMF.

FCLS solves the simplex-constrained least-squares problem per pixel
through the shared ADMM engine.  The blind path alternates projected
gradient steps on endmembers and abundances for the regularized
factorization objective, with a geometric pure-pixel initializer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport, project_columns
from .qp import solve_simplex_qp


class RankDeficiencyError(ValueError):
    """Data rank is too low to extract the requested number of endmembers."""


@dataclass(frozen=True)
class FclsOptions:
    rho: float = 1.0
    max_iters: int = 500
    primal_tol: float = 1e-8
    dual_tol: float = 1e-8

    def __post_init__(self):
        if self.rho <= 0 or self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("rho and tolerances must be positive")


@dataclass(frozen=True)
class NmfOptions:
    volume_weight: float = 0.0
    sparsity_weight: float = 0.0
    max_iters: int = 500
    step_shrink: float = 0.5
    rel_obj_tol: float = 1e-9

    def __post_init__(self):
        if self.volume_weight < 0 or self.sparsity_weight < 0:
            raise ValueError("regularization weights must be >= 0")
        if not (0.0 < self.step_shrink < 1.0):
            raise ValueError("step_shrink must lie in (0, 1)")


# ---------------------------------------------------------------------------
# FCLS
# ---------------------------------------------------------------------------

def _fcls_qp_data(M: np.ndarray, Y_cols: np.ndarray):
    """(Q, C) so that 0.5 a'Qa + c'a + ||y||^2 equals ||y - Ma||^2."""
    Q = 2.0 * (M.T @ M)
    C = -2.0 * (M.T @ Y_cols)
    return Q, C


def fcls_solve(M: EndmemberMatrix, y: np.ndarray, opts: FclsOptions = FclsOptions()):
    """Fully constrained least squares for one pixel.

    Minimizes ||y - Ma||^2 over the unit simplex.  Returns the
    abundance vector and a report whose objective trace is the true
    residual norm per iteration.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (M.n_bands,):
        raise ValueError(f"pixel length {y.shape} does not match L={M.n_bands}")
    if not np.all(np.isfinite(y)):
        raise ValueError("pixel contains non-finite entries")
    if M.n_bands < M.n_endmembers:
        raise ValueError(f"need L >= R, got L={M.n_bands}, R={M.n_endmembers}")
    t0 = time.perf_counter()
    Q, C = _fcls_qp_data(M.data, y[:, None])
    Z, iters, conv, trace = solve_simplex_qp(
        Q, C, rho=opts.rho, max_iters=opts.max_iters,
        primal_tol=opts.primal_tol, dual_tol=opts.dual_tol, track_objective=True,
    )
    const = float(y @ y)
    report = SolverReport(
        iterations=int(iters[0]),
        objective_trace=[v + const for v in trace],
        converged=bool(conv[0]),
        wall_time=time.perf_counter() - t0,
    )
    return Z[:, 0], report


def fcls_batch(
    M: EndmemberMatrix,
    cube: HyperCube,
    opts: FclsOptions = FclsOptions(),
    return_convergence: bool = False,
):
    """FCLS for every pixel of a cube; pixels are fully independent.

    The batched solve freezes each pixel at its own convergence point,
    so the result is bit-identical to a sequential per-pixel loop.
    With ``return_convergence`` the per-pixel converged flags and
    iteration counts are returned as well.
    """
    Y = cube.pixels()
    if Y.shape[0] != M.n_bands:
        raise ValueError(f"cube has {Y.shape[0]} bands, endmembers have {M.n_bands}")
    if M.n_bands < M.n_endmembers:
        raise ValueError(f"need L >= R, got L={M.n_bands}, R={M.n_endmembers}")
    Q, C = _fcls_qp_data(M.data, Y)
    Z, iters, conv, _ = solve_simplex_qp(
        Q, C, rho=opts.rho, max_iters=opts.max_iters,
        primal_tol=opts.primal_tol, dual_tol=opts.dual_tol,
    )
    A = AbundanceMatrix(data=Z)
    if return_convergence:
        return A, conv, iters
    return A


# ---------------------------------------------------------------------------
# Regularized NMF
# ---------------------------------------------------------------------------

def _adjugate(G: np.ndarray) -> np.ndarray:
    """Adjugate via cofactors; finite even where G is singular."""
    n = G.shape[0]
    if n == 1:
        return np.ones((1, 1))
    adj = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(G, i, axis=0), j, axis=1)
            adj[j, i] = (-1.0) ** (i + j) * np.linalg.det(minor)
    return adj


def _volume(M: np.ndarray) -> float:
    """det of the Gram matrix of the mean-centered endmembers."""
    Mc = M - M.mean(axis=1, keepdims=True)
    return float(np.linalg.det(Mc.T @ Mc))


def _volume_grad(M: np.ndarray) -> np.ndarray:
    R = M.shape[1]
    Mc = M - M.mean(axis=1, keepdims=True)
    G = Mc.T @ Mc
    grad_centered = 2.0 * Mc @ _adjugate(G)
    return grad_centered - grad_centered.mean(axis=1, keepdims=True)


def nmf_unmix(
    cube: HyperCube,
    R: int,
    opts: NmfOptions = NmfOptions(),
    M0: np.ndarray | EndmemberMatrix | None = None,
    A0: np.ndarray | AbundanceMatrix | None = None,
):
    """Blind unmixing by alternating projected gradient descent.

    Objective: ||Y - MA||_F^2 + volume_weight * det(Gram(centered M))
    + sparsity_weight * sum of abundances, with M >= 0 and every
    abundance column projected onto the simplex after each step.
    Backtracking line search keeps the objective trace non-increasing.

    M0 defaults to the pure-pixel initializer, A0 to FCLS against M0.
    """
    Y = cube.pixels()
    L, N = Y.shape
    if R > min(L, N):
        raise ValueError(f"need R <= min(L, N), got R={R}, L={L}, N={N}")

    t0 = time.perf_counter()
    if M0 is None:
        M = vca_init(cube, R).data.copy()
    else:
        M = np.asarray(getattr(M0, "data", M0), dtype=np.float64).copy()
        if M.shape != (L, R) or np.any(M < 0):
            raise ValueError(f"M0 must be a nonnegative {L}x{R} matrix")
    if A0 is None:
        A = fcls_batch(EndmemberMatrix(data=M), cube).data.copy()
    else:
        A = np.asarray(getattr(A0, "data", A0), dtype=np.float64).copy()
        if A.shape != (R, N):
            raise ValueError(f"A0 must be {R}x{N}")
        A = project_columns(A)

    lam_v = opts.volume_weight
    lam_s = opts.sparsity_weight

    def objective(M_, A_, resid_=None):
        resid = Y - M_ @ A_ if resid_ is None else resid_
        val = float(np.sum(resid * resid))
        if lam_v > 0:
            val += lam_v * _volume(M_)
        if lam_s > 0:
            val += lam_s * float(np.sum(A_))
        return val

    obj = objective(M, A)
    trace = []
    converged = False
    step_a = 1.0 / max(2.0 * np.linalg.norm(M.T @ M, 2), 1e-12)
    step_m = 1.0 / max(2.0 * np.linalg.norm(A @ A.T, 2), 1e-12)

    for _ in range(opts.max_iters):
        if not np.isfinite(obj):
            raise RuntimeError("NMF objective diverged to a non-finite value")

        # abundance step
        grad_a = 2.0 * (M.T @ (M @ A - Y)) + lam_s
        t = step_a
        for _bt in range(60):
            A_try = project_columns(A - t * grad_a)
            obj_try = objective(M, A_try)
            if obj_try <= obj:
                A, obj = A_try, obj_try
                step_a = min(t * 2.0, 1e6)
                break
            t *= opts.step_shrink

        # endmember step
        grad_m = 2.0 * ((M @ A - Y) @ A.T)
        if lam_v > 0:
            grad_m = grad_m + lam_v * _volume_grad(M)
        s = step_m
        for _bt in range(60):
            M_try = np.maximum(M - s * grad_m, 0.0)
            obj_try = objective(M_try, A)
            if obj_try <= obj:
                M, obj = M_try, obj_try
                step_m = min(s * 2.0, 1e6)
                break
            s *= opts.step_shrink

        trace.append(obj)
        if len(trace) >= 2 and abs(trace[-2] - trace[-1]) <= opts.rel_obj_tol * max(1.0, abs(trace[-2])):
            converged = True
            break

    report = SolverReport(
        iterations=len(trace),
        objective_trace=trace,
        converged=converged,
        wall_time=time.perf_counter() - t0,
    )
    return EndmemberMatrix(data=M), AbundanceMatrix(data=project_columns(A)), report


# ---------------------------------------------------------------------------
# Geometric initialization
# ---------------------------------------------------------------------------

def vca_init(cube: HyperCube, R: int, seed: int = 0) -> EndmemberMatrix:
    """Pure-pixel extraction by iterative orthogonal-subspace projection.

    Picks the pixel of maximum norm, projects all spectra onto the
    orthogonal complement of the chosen pixels, and repeats; returned
    columns are actual pixels of the cube.  Ties break to the lowest
    pixel index.  The procedure is fully deterministic; ``seed`` is
    accepted for interface compatibility with stochastic extractors.
    """
    del seed
    Y = cube.pixels()
    L, N = Y.shape
    if R > min(L, N):
        raise ValueError(f"need R <= min(L, N), got R={R}, L={L}, N={N}")
    resid = Y.copy()
    scale = float(np.max(np.sqrt(np.sum(Y * Y, axis=0))))
    chosen: list[int] = []
    basis = np.zeros((L, 0))
    for _ in range(R):
        norms = np.sqrt(np.sum(resid * resid, axis=0))
        idx = int(np.argmax(norms))
        if norms[idx] <= 1e-10 * max(scale, 1.0):
            raise RankDeficiencyError(
                f"data rank < {R}: residual energy exhausted after {len(chosen)} picks"
            )
        chosen.append(idx)
        u = resid[:, idx].copy()
        u /= np.linalg.norm(u)
        basis = np.hstack([basis, u[:, None]])
        resid = resid - np.outer(u, u @ resid)
    return EndmemberMatrix(data=Y[:, chosen].copy())
