"""Reconstruction losses and ground-truth evaluation.

Mean squared error, spectral angle (scale-invariant) and spectral
information divergence (band-normalized KL), plus the evaluation
driver that permutation-matches estimated endmembers to truth before
scoring.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import HyperCube

_SID_FLOOR = 1e-12


def _pixels(x) -> np.ndarray:
    """Spectra as columns from a cube, matrix or vector."""
    if isinstance(x, HyperCube):
        return x.pixels()
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim == 1:
        return arr[:, None]
    return arr


def mse_loss(Y, Y_hat) -> float:
    """Mean over pixels of the squared residual norm."""
    A, B = _pixels(Y), _pixels(Y_hat)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    d = A - B
    return float(np.sum(d * d) / A.shape[1])


def sad_loss(Y, Y_hat) -> float:
    """Mean spectral angle in radians; cosine clamped before arccos."""
    A, B = _pixels(Y), _pixels(Y_hat)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    na = np.linalg.norm(A, axis=0)
    nb = np.linalg.norm(B, axis=0)
    for name, n in (("first", na), ("second", nb)):
        zero = np.nonzero(n == 0.0)[0]
        if zero.size:
            raise ValueError(f"zero-norm pixel {int(zero[0])} in {name} argument")
    cos = np.clip(np.sum(A * B, axis=0) / (na * nb), -1.0, 1.0)
    return float(np.mean(np.arccos(cos)))


def sid_loss(Y, Y_hat) -> float:
    """Mean band-normalized KL divergence (natural log).

    Spectra are normalized to probability vectors; exact zeros are
    floored at 1e-12 so sparse spectra stay finite.  Negative entries
    or nonpositive pixel sums are domain errors.
    """
    A, B = _pixels(Y), _pixels(Y_hat)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    for name, X in (("first", A), ("second", B)):
        if np.any(X < 0.0):
            raise ValueError(f"negative entry in {name} argument")
        sums = X.sum(axis=0)
        bad = np.nonzero(sums <= 0.0)[0]
        if bad.size:
            raise ValueError(f"nonpositive pixel sum at pixel {int(bad[0])} in {name} argument")
    P = np.maximum(A / A.sum(axis=0), _SID_FLOOR)
    Q = np.maximum(B / B.sum(axis=0), _SID_FLOOR)
    return float(np.mean(np.sum(P * np.log(P / Q), axis=0)))


# ---------------------------------------------------------------------------
# Endmember-matched evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    abundance_rmse: float
    endmember_sad_deg: tuple
    reconstruction_mse: float
    matching: tuple


def _sad_matrix(M_est: np.ndarray, M_true: np.ndarray) -> np.ndarray:
    """cost[i, j] = spectral angle between estimate i and truth j."""
    ne = M_est / np.linalg.norm(M_est, axis=0)
    nt = M_true / np.linalg.norm(M_true, axis=0)
    return np.arccos(np.clip(ne.T @ nt, -1.0, 1.0))


def _exhaustive_match(cost: np.ndarray) -> tuple:
    R = cost.shape[0]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(R)):
        total = sum(cost[perm[j], j] for j in range(R))
        if total < best:
            best, best_perm = total, perm
    return tuple(best_perm)


def _greedy_match(cost: np.ndarray) -> tuple:
    R = cost.shape[0]
    taken = np.zeros(R, dtype=bool)
    perm = [0] * R
    for j in range(R):
        col = np.where(taken, np.inf, cost[:, j])
        i = int(np.argmin(col))
        perm[j] = i
        taken[i] = True
    return tuple(perm)


def match_endmembers(M_est: np.ndarray, M_true: np.ndarray) -> tuple:
    """Estimate-to-truth assignment minimizing total spectral angle.

    Exhaustive for R <= 8, greedy beyond.  Entry j of the result is
    the estimate column matched to truth column j.
    """
    cost = _sad_matrix(M_est, M_true)
    return _exhaustive_match(cost) if cost.shape[0] <= 8 else _greedy_match(cost)


def evaluate(M_est, A_est, M_true, A_true, cube: HyperCube) -> EvalResult:
    """Permutation-matched scores of an unmixing result against truth."""
    Me = np.asarray(getattr(M_est, "data", M_est), dtype=np.float64)
    Ae = np.asarray(getattr(A_est, "data", A_est), dtype=np.float64)
    Mt = np.asarray(getattr(M_true, "data", M_true), dtype=np.float64)
    At = np.asarray(getattr(A_true, "data", A_true), dtype=np.float64)
    if Me.shape[1] != Mt.shape[1]:
        raise ValueError(f"endmember count mismatch: {Me.shape[1]} vs {Mt.shape[1]}")
    perm = match_endmembers(Me, Mt)
    Me_m = Me[:, perm]
    Ae_m = Ae[perm, :]
    rmse = float(np.sqrt(np.mean((Ae_m - At) ** 2)))
    sads = np.degrees(np.diag(_sad_matrix(Me_m, Mt)))
    recon = Me_m @ Ae_m
    recon_mse = mse_loss(cube.pixels(), recon)
    return EvalResult(
        abundance_rmse=rmse,
        endmember_sad_deg=tuple(float(s) for s in sads),
        reconstruction_mse=recon_mse,
        matching=perm,
    )
