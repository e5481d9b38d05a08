"""Kernel-based nonlinear unmixing (linear mixture + RKHS fluctuation).

The pixel model is y = Ma + f(band) + noise where f lives in a kernel
space indexed by the rows of M (all endmember reflectances at one
band).  The representer property turns the variational problem

    min (1/2mu) sum_l e_l^2 + 0.5 (||f||^2 + ||a||^2),
    e_l = y_l - m_row_l . a - f(m_row_l),  a on the simplex

into a finite simplex-constrained QP: eliminating the kernel weights
for fixed a gives

    min_a 0.5 (y - Ma)' (K + mu I)^{-1} (y - Ma) + 0.5 ||a||^2

which the shared ADMM engine solves; the kernel expansion weights are
recovered as beta = (K + mu I)^{-1} (y - Ma).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import EndmemberMatrix, SolverReport
from .classic import FclsOptions
from .qp import solve_simplex_qp


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"  # gaussian | polynomial
    bandwidth: Optional[float] = None  # None -> median pairwise distance
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")


@dataclass(frozen=True)
class KHypeSolution:
    a: np.ndarray
    dual_coefficients: np.ndarray
    mu: float


def _median_bandwidth(rows: np.ndarray) -> float:
    d2 = np.sum((rows[:, None, :] - rows[None, :, :]) ** 2, axis=2)
    iu = np.triu_indices(rows.shape[0], k=1)
    med = float(np.sqrt(np.median(d2[iu]))) if iu[0].size else 0.0
    return med if med > 0 else 1.0


def build_band_kernel(M: EndmemberMatrix, spec: KernelSpec = KernelSpec()) -> np.ndarray:
    """L x L kernel Gram matrix over the rows of the endmember matrix."""
    rows = M.data  # row l holds the R reflectances at band l
    if spec.kind == "gaussian":
        sigma = spec.bandwidth if spec.bandwidth is not None else _median_bandwidth(rows)
        d2 = np.sum((rows[:, None, :] - rows[None, :, :]) ** 2, axis=2)
        K = np.exp(-d2 / (2.0 * sigma * sigma))
    else:
        K = (rows @ rows.T + spec.offset) ** spec.degree
    return 0.5 * (K + K.T)


def khype_objective(M: EndmemberMatrix, y: np.ndarray, K: np.ndarray, mu: float,
                    a: np.ndarray, beta: np.ndarray) -> float:
    """Primal objective value at a candidate (a, beta) pair."""
    e = y - M.data @ a - K @ beta
    return float(np.sum(e * e) / (2.0 * mu) + 0.5 * (beta @ (K @ beta) + a @ a))


def khype_solve(
    M: EndmemberMatrix,
    y: np.ndarray,
    spec: KernelSpec = KernelSpec(),
    mu: float = 0.01,
    opts: FclsOptions = FclsOptions(),
    kernel_matrix: Optional[np.ndarray] = None,
):
    """Solve the kernel unmixing problem for one pixel.

    Returns (KHypeSolution, SolverReport).  ``kernel_matrix`` overrides
    the kernel built from ``spec`` (useful for degenerate or
    precomputed kernels).
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (M.n_bands,):
        raise ValueError(f"pixel length {y.shape} does not match L={M.n_bands}")
    t0 = time.perf_counter()
    K = build_band_kernel(M, spec) if kernel_matrix is None else np.asarray(kernel_matrix, dtype=np.float64)
    Kmu = K + mu * np.eye(M.n_bands)
    G = np.linalg.solve(Kmu, M.data)  # (K + mu I)^{-1} M
    Q = M.data.T @ G
    Q = 0.5 * (Q + Q.T) + np.eye(M.n_endmembers)
    Sy = np.linalg.solve(Kmu, y)
    c = -(M.data.T @ Sy)

    Z, iters, conv, trace = solve_simplex_qp(
        Q, c[:, None], rho=opts.rho, max_iters=opts.max_iters,
        primal_tol=opts.primal_tol, dual_tol=opts.dual_tol, track_objective=True,
    )
    a = Z[:, 0]
    beta = np.linalg.solve(Kmu, y - M.data @ a)
    const = 0.5 * float(y @ Sy)
    report = SolverReport(
        iterations=int(iters[0]),
        objective_trace=[v + const for v in trace],
        converged=bool(conv[0]),
        wall_time=time.perf_counter() - t0,
    )
    return KHypeSolution(a=a, dual_coefficients=beta, mu=mu), report


def khype_batch(
    M: EndmemberMatrix,
    Y_cols: np.ndarray,
    spec: KernelSpec = KernelSpec(),
    mu: float = 0.01,
    opts: FclsOptions = FclsOptions(),
):
    """Kernel unmixing for many pixels sharing one endmember matrix.

    The kernel Gram matrix and its shifted factorization are computed
    once.  Returns (A, duals) with one column per pixel.
    """
    if mu <= 0:
        raise ValueError("mu must be > 0")
    Y_cols = np.asarray(Y_cols, dtype=np.float64)
    K = build_band_kernel(M, spec)
    Kmu = K + mu * np.eye(M.n_bands)
    G = np.linalg.solve(Kmu, M.data)
    Q = M.data.T @ G
    Q = 0.5 * (Q + Q.T) + np.eye(M.n_endmembers)
    C = -(G.T @ Y_cols)
    A, _, _, _ = solve_simplex_qp(
        Q, C, rho=opts.rho, max_iters=opts.max_iters,
        primal_tol=opts.primal_tol, dual_tol=opts.dual_tol,
    )
    duals = np.linalg.solve(Kmu, Y_cols - M.data @ A)
    return A, duals


def khype_reconstruct(
    M: EndmemberMatrix,
    sol: KHypeSolution,
    spec: KernelSpec = KernelSpec(),
    kernel_matrix: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Reconstructed pixel: linear mixture plus the kernel expansion."""
    K = build_band_kernel(M, spec) if kernel_matrix is None else np.asarray(kernel_matrix, dtype=np.float64)
    return M.data @ sol.a + K @ sol.dual_coefficients
