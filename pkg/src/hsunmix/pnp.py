"""Plug-and-play ADMM unmixing with swappable denoisers.

The abundance-regularized problem is split as A = Z; the A update is
the per-pixel simplex-constrained quadratic handled by the shared
engine, and the Z update is whatever denoiser is plugged in, applied
to the R abundance planes laid out on the pixel grid.  An exact
l1-regularized ADMM with an analytic shrinkage step is included as the
oracle certifying the soft-threshold configuration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport
from .qp import solve_simplex_qp

# Inner-engine settings for the A step; shared by pnp_unmix and the
# l1 oracle so both solve the identical subproblem.
_INNER_RHO = 1.0
_INNER_ITERS = 400
_INNER_TOL = 1e-10


@dataclass(frozen=True)
class DenoiserSpec:
    """Denoiser selection: identity | soft_threshold | tv2d | gaussian_blur."""

    kind: str = "identity"
    lam: float = 0.0
    inner_iters: int = 30
    sigma_px: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "soft_threshold", "tv2d", "gaussian_blur"):
            raise ValueError(f"unknown denoiser kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.sigma_px <= 0:
            raise ValueError("sigma_px must be > 0")


@dataclass(frozen=True)
class PnpOptions:
    rho: float = 1.0
    max_iters: int = 200
    primal_tol: float = 1e-6
    known_M: bool = True

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be > 0")


# ---------------------------------------------------------------------------
# Denoisers
# ---------------------------------------------------------------------------

def _soft(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _tv_chambolle(plane: np.ndarray, lam: float, iters: int, tau: float = 0.248) -> np.ndarray:
    """Isotropic TV proximal operator by dual fixed-point ascent.

    Forward differences with a zero last row/column (reflect boundary),
    divergence as the negative adjoint.
    """
    if lam == 0.0:
        return plane.copy()
    h, w = plane.shape
    px = np.zeros((h, w))
    py = np.zeros((h, w))
    for _ in range(iters):
        div = np.zeros((h, w))
        div[:, :-1] -= px[:, :-1]
        div[:, 1:] += px[:, :-1]
        div[:-1, :] -= py[:-1, :]
        div[1:, :] += py[:-1, :]
        u = div - plane / lam
        gx = np.zeros((h, w))
        gy = np.zeros((h, w))
        gx[:, :-1] = u[:, 1:] - u[:, :-1]
        gy[:-1, :] = u[1:, :] - u[:-1, :]
        denom = 1.0 + tau * np.sqrt(gx * gx + gy * gy)
        px = (px + tau * gx) / denom
        py = (py + tau * gy) / denom
    div = np.zeros((h, w))
    div[:, :-1] -= px[:, :-1]
    div[:, 1:] += px[:, :-1]
    div[:-1, :] -= py[:-1, :]
    div[1:, :] += py[:-1, :]
    return plane - lam * div


def _gaussian_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian convolution with reflect padding."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-x * x / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    def conv_rows(img):
        if img.shape[1] == 1:
            return img.copy()
        pad = np.pad(img, ((0, 0), (radius, radius)), mode="reflect")
        out = np.zeros_like(img)
        for k, wgt in enumerate(kernel):
            out += wgt * pad[:, k : k + img.shape[1]]
        return out

    out = conv_rows(plane)
    return conv_rows(out.T).T


def apply_denoiser(planes: np.ndarray, spec: DenoiserSpec) -> np.ndarray:
    """Apply the selected denoiser to an R x height x width stack."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 3:
        raise ValueError(f"expected an R x height x width stack, got shape {planes.shape}")
    if not np.all(np.isfinite(planes)):
        raise ValueError("denoiser input contains non-finite entries")
    if spec.kind == "identity":
        return planes.copy()
    if spec.kind == "soft_threshold":
        return _soft(planes, spec.lam)
    if spec.kind == "tv2d":
        return np.stack([_tv_chambolle(p, spec.lam, spec.inner_iters) for p in planes])
    if spec.kind == "gaussian_blur":
        return np.stack([_gaussian_blur(p, spec.sigma_px) for p in planes])
    raise ValueError(f"unknown denoiser kind {spec.kind!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Plug-and-play ADMM
# ---------------------------------------------------------------------------

def pnp_unmix(
    cube: HyperCube,
    M: EndmemberMatrix,
    denoiser: DenoiserSpec,
    opts: PnpOptions = PnpOptions(),
    shape=None,
    record_iterates: bool = False,
):
    """Abundance estimation with a plugged spatial prior, known M.

    Iterates: A step solves, per pixel, the data term plus the penalty
    tying A to the denoised splitting variable (simplex-projected
    closed form through the shared engine); Z step reshapes the R
    abundance planes onto the pixel grid and denoises them; V
    accumulates the running residual.  Stops on the relative primal
    residual.  The returned estimate is A, which is always feasible;
    the final Z is available in the report extras.
    """
    if not opts.known_M:
        raise ValueError("only the known-endmember variant is supported")
    if shape is None:
        shape = (cube.height, cube.width)
    height, width = shape
    Y = cube.pixels()
    L, N = Y.shape
    if height * width != N:
        raise ValueError(f"shape {shape} does not cover N={N} pixels")
    if L != M.n_bands:
        raise ValueError(f"cube has {L} bands, endmembers have {M.n_bands}")
    R = M.n_endmembers
    rho = opts.rho

    t0 = time.perf_counter()
    Q = 2.0 * (M.data.T @ M.data) + rho * np.eye(R)
    C_base = -2.0 * (M.data.T @ Y)
    Z = np.full((R, N), 1.0 / R)
    V = np.zeros((R, N))
    A = Z.copy()
    trace = []
    iterates = []
    converged = False
    iters = 0

    for _ in range(opts.max_iters):
        C = C_base - rho * (Z - V)
        A, _, _, _ = solve_simplex_qp(
            Q, C, rho=_INNER_RHO, max_iters=_INNER_ITERS,
            primal_tol=_INNER_TOL, dual_tol=_INNER_TOL,
        )
        planes = (A + V).reshape(R, height, width)
        Z = apply_denoiser(planes, denoiser).reshape(R, N)
        V = V + A - Z
        iters += 1
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Z)) and np.all(np.isfinite(V))):
            raise RuntimeError(f"non-finite iterate at outer iteration {iters}")
        resid = Y - M.data @ A
        trace.append(float(np.sum(resid * resid)))
        if record_iterates:
            iterates.append((A.copy(), Z.copy(), V.copy()))
        gap = np.linalg.norm(A - Z) / max(np.linalg.norm(A), 1e-30)
        if gap < opts.primal_tol:
            converged = True
            break

    report = SolverReport(
        iterations=iters,
        objective_trace=trace,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        extras={"Z": Z, "iterates": iterates},
    )
    return AbundanceMatrix(data=A), report


def admm_l1_oracle(
    cube: HyperCube,
    M: EndmemberMatrix,
    lam: float,
    rho: float = 1.0,
    iters: int = 200,
) -> AbundanceMatrix:
    """Exact ADMM for the l1-regularized simplex-constrained problem.

    min ||Y - MA||_F^2 + lam * ||A||_1 with simplex-feasible A.  The A
    step matches pnp_unmix bit for bit (same engine, same settings);
    the Z step is the analytic shrinkage prox soft(A + V, lam/rho).
    Runs a fixed number of iterations; deterministic.
    """
    Y = cube.pixels()
    R = M.n_endmembers
    N = Y.shape[1]
    Q = 2.0 * (M.data.T @ M.data) + rho * np.eye(R)
    C_base = -2.0 * (M.data.T @ Y)
    Z = np.full((R, N), 1.0 / R)
    V = np.zeros((R, N))
    A = Z.copy()
    for _ in range(iters):
        C = C_base - rho * (Z - V)
        A, _, _, _ = solve_simplex_qp(
            Q, C, rho=_INNER_RHO, max_iters=_INNER_ITERS,
            primal_tol=_INNER_TOL, dual_tol=_INNER_TOL,
        )
        Z = _soft(A + V, lam / rho)
        V = V + A - Z
    return AbundanceMatrix(data=A)
