"""Forward mixture mechanisms and synthetic scene generation.

Every solver in this package is tested against data produced here: the
linear mixture, the generalized bilinear mixture with pairwise
interaction terms, the simplified Hapke intimate-mixture model (linear
in single-scattering albedo), and post-nonlinear distortions of the
linear mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AbundanceMatrix, EndmemberMatrix, HyperCube


class GenerationError(RuntimeError):
    """Synthetic scene constraints could not be satisfied."""


# ---------------------------------------------------------------------------
# Parameter types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Additive white Gaussian noise level, as SNR in dB.

    ``snr_db = inf`` is the documented no-noise sentinel.
    """

    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf (no-noise sentinel)")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class BilinearCoupling:
    """Symmetric zero-diagonal interaction strengths between endmember pairs."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
            raise ValueError("beta must be a square matrix")
        if not np.array_equal(beta, beta.T):
            raise ValueError("beta must be symmetric")
        if np.any(np.diag(beta) != 0.0):
            raise ValueError("beta must have zero diagonal")
        if np.any(beta < 0.0) or np.any(beta > 1.0):
            raise ValueError("beta entries must lie in [0, 1]")


@dataclass(frozen=True)
class HapkeGeometry:
    """Cosines of the incoming (mu0) and outgoing (mu) radiation angles."""

    mu0: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.mu0 <= 1.0) or not (0.0 < self.mu <= 1.0):
            raise ValueError("mu0 and mu must lie in (0, 1]")


@dataclass(frozen=True)
class PostNonlinearitySpec:
    """Elementwise distortion applied to the linear mixture."""

    kind: str = "identity"
    strength: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "quadratic", "tanh_saturation"):
            raise ValueError(f"unknown post-nonlinearity kind {self.kind!r}")
        if self.strength < 0.0:
            raise ValueError("strength must be >= 0")


# ---------------------------------------------------------------------------
# Forward models
# ---------------------------------------------------------------------------

def _check_dims(M: EndmemberMatrix, A: AbundanceMatrix):
    if M.n_endmembers != A.n_endmembers:
        raise ValueError(
            f"endmember count mismatch: M has R={M.n_endmembers}, A has R={A.n_endmembers}"
        )


def _as_cube(Y_cols: np.ndarray, shape=None) -> HyperCube:
    n = Y_cols.shape[1]
    if shape is None:
        shape = (1, n)
    return HyperCube(data=Y_cols.T.copy(), height=shape[0], width=shape[1])


def lmm_forward(M: EndmemberMatrix, A: AbundanceMatrix, shape=None) -> HyperCube:
    """Linear mixture: each pixel is M @ a_i, no noise."""
    _check_dims(M, A)
    return _as_cube(M.data @ A.data, shape)


def bilinear_forward(
    M: EndmemberMatrix, A: AbundanceMatrix, coupling: BilinearCoupling, shape=None
) -> HyperCube:
    """Generalized bilinear mixture.

    Adds, on top of the linear term, one Hadamard-product signature per
    endmember pair weighted by beta_ij * a_i * a_j.  Pairs are summed
    over i < j only; self-interaction terms are excluded.
    """
    _check_dims(M, A)
    R = M.n_endmembers
    if coupling.beta.shape != (R, R):
        raise ValueError(f"coupling must be {R}x{R}, got {coupling.beta.shape}")
    Y = M.data @ A.data
    for i in range(R):
        for j in range(i + 1, R):
            b = coupling.beta[i, j]
            if b == 0.0:
                continue
            cross = M.data[:, i] * M.data[:, j]
            Y = Y + np.outer(cross, b * A.data[i, :] * A.data[j, :])
    return _as_cube(Y, shape)


def hapke_ssa_to_reflectance(w: np.ndarray, geom: HapkeGeometry = HapkeGeometry()) -> np.ndarray:
    """Bidirectional reflectance of a single-scattering-albedo spectrum.

    y = w / ((1 + 2*mu*sqrt(1-w)) * (1 + 2*mu0*sqrt(1-w))), per band.
    """
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0.0) or np.any(w > 1.0) or not np.all(np.isfinite(w)):
        raise ValueError("SSA values must lie in [0, 1]")
    t = np.sqrt(1.0 - w)
    return w / ((1.0 + 2.0 * geom.mu * t) * (1.0 + 2.0 * geom.mu0 * t))


def hapke_reflectance_to_ssa(y: np.ndarray, geom: HapkeGeometry = HapkeGeometry()) -> np.ndarray:
    """Invert the reflectance model back to single-scattering albedo.

    Per band, t = sqrt(1-w) solves the quadratic
    t^2 (4*y*mu*mu0 + 1) + 2*y*(mu+mu0) t + (y - 1) = 0; the root in
    [0, 1] is kept and w = 1 - t^2 returned.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0.0) or np.any(y > 1.0) or not np.all(np.isfinite(y)):
        raise ValueError("reflectance values must lie in [0, 1]")
    a = 4.0 * y * geom.mu * geom.mu0 + 1.0
    b = 2.0 * y * (geom.mu + geom.mu0)
    c = y - 1.0
    disc = b * b - 4.0 * a * c
    # b >= 0 and c <= 0: the nonnegative root is c/q with q = -(b + sqrt(disc))/2
    q = -0.5 * (b + np.sqrt(disc))
    t = c / q
    if np.any(t < -1e-12) or np.any(t > 1.0 + 1e-12):
        raise ValueError("no albedo root in [0, 1] for the given reflectance")
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t * t


def hapke_mix(
    W_ssa: EndmemberMatrix, a: np.ndarray, geom: HapkeGeometry = HapkeGeometry()
) -> np.ndarray:
    """Intimate mixture: linear in SSA, then mapped to reflectance."""
    if W_ssa.domain_tag != "ssa":
        raise ValueError("hapke_mix requires endmembers tagged 'ssa'")
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (W_ssa.n_endmembers,):
        raise ValueError(f"abundance vector must have length {W_ssa.n_endmembers}")
    return hapke_ssa_to_reflectance(W_ssa.data @ a, geom)


def post_nonlinear_forward(
    M: EndmemberMatrix, A: AbundanceMatrix, g: PostNonlinearitySpec, shape=None
) -> HyperCube:
    """Apply an elementwise distortion to the linear mixture."""
    _check_dims(M, A)
    X = M.data @ A.data
    if g.kind == "identity":
        Y = X
    elif g.kind == "quadratic":
        Y = X + g.strength * X * X
    elif g.kind == "tanh_saturation":
        # tanh(b*x)/b approaches x as b -> 0; b = 0 is the identity limit
        Y = np.tanh(g.strength * X) / g.strength if g.strength > 0.0 else X
    else:  # pragma: no cover - constructor rejects unknown kinds
        raise ValueError(f"unknown post-nonlinearity kind {g.kind!r}")
    return _as_cube(Y, shape)


def add_noise(cube: HyperCube, spec: NoiseSpec) -> HyperCube:
    """Add i.i.d. zero-mean Gaussian noise at the requested SNR.

    The noise variance is ||Y||_F^2 / (N * L * 10^(snr_db/10)), so the
    quoted SNR is signal power over noise power averaged across all
    entries.  Deterministic for a fixed seed.
    """
    if spec.snr_db == math.inf:
        return cube
    Y = cube.data
    sigma2 = float(np.sum(Y * Y)) / (Y.size * 10.0 ** (spec.snr_db / 10.0))
    rng = np.random.default_rng(spec.seed)
    noisy = Y + rng.normal(0.0, math.sqrt(sigma2), size=Y.shape)
    return HyperCube(data=noisy, height=cube.height, width=cube.width, wavelengths=cube.wavelengths)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

def pairwise_sad_deg(M: np.ndarray) -> np.ndarray:
    """Pairwise spectral angles (degrees) between the columns of M."""
    norms = np.linalg.norm(M, axis=0)
    G = (M.T @ M) / np.outer(norms, norms)
    G = np.clip(G, -1.0, 1.0)
    return np.degrees(np.arccos(G))


def _smooth_spectra(rng: np.random.Generator, L: int, R: int) -> np.ndarray:
    """Moving-average-smoothed positive random spectra, one per column."""
    window = max(3, L // 12)
    kernel = np.ones(window) / window
    raw = rng.uniform(0.05, 0.95, size=(L + 2 * window, R))
    out = np.empty((L, R))
    for r in range(R):
        smoothed = np.convolve(raw[:, r], kernel, mode="valid")
        out[:, r] = smoothed[:L]
    return out


def gen_scene(
    R: int,
    L: int,
    N: int,
    model_kind: str = "lmm",
    seed: int = 0,
    snr_db: float = math.inf,
    shape=None,
    min_sad_deg: float = 5.0,
):
    """Draw a random ground-truth scene and its observed cube.

    Endmembers are smoothed positive random spectra redrawn until every
    pair is at least ``min_sad_deg`` apart; abundances are uniform on
    the simplex (flat Dirichlet).  ``model_kind`` selects the forward
    model: lmm | bilinear | hapke | post_quadratic | post_tanh.
    Fully deterministic per seed.

    Returns (EndmemberMatrix, AbundanceMatrix, HyperCube).
    """
    if R > min(L, N):
        raise ValueError(f"need R <= min(L, N), got R={R}, L={L}, N={N}")
    rng = np.random.default_rng(seed)
    M = None
    for _ in range(100):
        cand = _smooth_spectra(rng, L, R)
        sads = pairwise_sad_deg(cand)
        if R == 1 or np.min(sads[np.triu_indices(R, k=1)]) >= min_sad_deg:
            M = cand
            break
    if M is None:
        raise GenerationError(
            f"could not draw {R} endmembers with pairwise SAD >= {min_sad_deg} deg in 100 tries"
        )
    A = rng.dirichlet(np.ones(R), size=N).T
    abund = AbundanceMatrix(data=A)

    if model_kind == "lmm":
        em = EndmemberMatrix(data=M)
        cube = lmm_forward(em, abund, shape)
    elif model_kind == "bilinear":
        em = EndmemberMatrix(data=M)
        beta = rng.uniform(0.0, 1.0, size=(R, R))
        beta = 0.5 * (beta + beta.T)
        np.fill_diagonal(beta, 0.0)
        cube = bilinear_forward(em, abund, BilinearCoupling(beta=beta), shape)
    elif model_kind == "hapke":
        em = EndmemberMatrix(data=M, domain_tag="ssa")
        geom = HapkeGeometry()
        refl = hapke_ssa_to_reflectance(M @ A, geom)
        cube = _as_cube(refl, shape)
    elif model_kind == "post_quadratic":
        em = EndmemberMatrix(data=M)
        cube = post_nonlinear_forward(em, abund, PostNonlinearitySpec("quadratic", 0.3), shape)
    elif model_kind == "post_tanh":
        em = EndmemberMatrix(data=M)
        cube = post_nonlinear_forward(em, abund, PostNonlinearitySpec("tanh_saturation", 0.7), shape)
    else:
        raise ValueError(f"unknown model_kind {model_kind!r}")

    if math.isfinite(snr_db):
        cube = add_noise(cube, NoiseSpec(snr_db=snr_db, seed=seed + 1))
    return em, abund, cube


def blocky_abundances(R: int, height: int, width: int, n_cells: int = 6, seed: int = 0) -> AbundanceMatrix:
    """Piecewise-constant abundance maps (Voronoi cells on the pixel grid).

    Every pixel in a cell shares one simplex vector; useful ground
    truth for spatial priors such as total variation.
    """
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_cells, 2)) * np.array([height, width])
    values = rng.dirichlet(np.ones(R), size=n_cells)
    rows, cols = np.mgrid[0:height, 0:width]
    pts = np.stack([rows.ravel() + 0.5, cols.ravel() + 0.5], axis=1)
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    label = np.argmin(d2, axis=1)
    A = values[label].T
    return AbundanceMatrix(data=A)
