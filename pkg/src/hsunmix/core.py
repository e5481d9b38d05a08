"""Domain types and constraint geometry shared by every solver.

The three constraint sets that make unmixing estimates physically
interpretable are enforced here:

* ENC: endmember spectra are elementwise nonnegative,
* ANC: abundance fractions are elementwise nonnegative,
* ASC: abundance fractions of a pixel sum to one.

The simplex defined by ANC+ASC is the feasible set every abundance
solver projects onto, so the Euclidean projection lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Stored abundance columns must satisfy ASC to this tolerance.
ASC_TOL = 1e-9

# Points already nonnegative with |sum - 1| below this are treated as
# fixed points of the simplex projection (makes projection exactly
# idempotent; the threshold path itself lands well inside this band).
_SIMPLEX_FIXED_TOL = 1e-12


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperCube:
    """Observed image: ``data`` holds one pixel spectrum per row (N x L).

    ``height * width`` must equal N.  ``wavelengths``, when given, is the
    band-center grid in nanometers and must be strictly increasing.
    """

    data: np.ndarray
    height: int
    width: int
    wavelengths: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"cube data must be a nonempty 2-D matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube data contains non-finite entries")
        if self.height < 1 or self.width < 1 or self.height * self.width != data.shape[0]:
            raise ValueError(
                f"height*width = {self.height}*{self.width} does not match N = {data.shape[0]}"
            )
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64)
            object.__setattr__(self, "wavelengths", wl)
            if wl.shape != (data.shape[1],):
                raise ValueError("wavelengths length must equal band count")
            if not np.all(np.diff(wl) > 0):
                raise ValueError("wavelengths must be strictly increasing")

    @property
    def n_pixels(self) -> int:
        return self.data.shape[0]

    @property
    def band_count(self) -> int:
        return self.data.shape[1]

    def pixels(self) -> np.ndarray:
        """Spectra as columns (L x N), the layout all solvers consume."""
        return self.data.T


@dataclass(frozen=True)
class EndmemberMatrix:
    """Pure spectra as columns (L x R), in reflectance or SSA units."""

    data: np.ndarray
    domain_tag: str = "reflectance"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[1] < 1:
            raise ValueError(f"endmember data must be an L x R matrix with R >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("endmember data contains non-finite entries")
        if self.domain_tag not in ("reflectance", "ssa"):
            raise ValueError(f"unknown domain_tag {self.domain_tag!r}")

    @property
    def n_bands(self) -> int:
        return self.data.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AbundanceMatrix:
    """Per-pixel fractions as columns (R x N); valid columns live on the simplex."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"abundance data must be an R x N matrix, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("abundance data contains non-finite entries")

    @property
    def n_endmembers(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[1]


@dataclass
class SolverReport:
    """Iteration diagnostics attached to every solver result."""

    iterations: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.objective_trace) != self.iterations:
            raise ValueError("objective_trace length must equal iterations")


@dataclass(frozen=True)
class Violation:
    """Outcome of :func:`validate`; ``ok`` is True when nothing is violated."""

    ok: bool
    constraint: Optional[str] = None
    index: Optional[tuple] = None
    magnitude: Optional[float] = None

    def __bool__(self) -> bool:
        return self.ok


OK = Violation(ok=True)


# ---------------------------------------------------------------------------
# Simplex projection
# ---------------------------------------------------------------------------

def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` onto the unit simplex.

    Sort-and-threshold algorithm (Duchi et al. 2008 style): sort
    descending, locate the largest support whose water level keeps all
    supported entries positive, subtract the level, clip.  O(R log R)
    and exact up to floating point.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return project_columns(v[:, None])[:, 0]


def project_columns(V: np.ndarray) -> np.ndarray:
    """Column-wise simplex projection of an R x N matrix.

    Column-separable and bit-identical to calling
    :func:`project_to_simplex` on each column, which batched solvers
    rely on for reproducibility.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError(f"expected an R x N matrix, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("cannot project a matrix with non-finite entries")
    R = V.shape[0]
    U = -np.sort(-V, axis=0)
    cumsum = np.cumsum(U, axis=0)
    ranks = np.arange(1, R + 1)[:, None]
    mask = U * ranks > cumsum - 1.0
    rho = R - 1 - np.argmax(mask[::-1, :], axis=0)
    theta = (cumsum[rho, np.arange(V.shape[1])] - 1.0) / (rho + 1.0)
    out = np.maximum(V - theta[None, :], 0.0)
    fixed = np.all(V >= 0.0, axis=0) & (np.abs(V.sum(axis=0) - 1.0) <= _SIMPLEX_FIXED_TOL)
    if np.any(fixed):
        out[:, fixed] = V[:, fixed]
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(obj) -> Violation:
    """Report the first violated invariant of a domain object, or OK.

    Diagnostic only: never raises.  Accepts :class:`HyperCube`,
    :class:`EndmemberMatrix` or :class:`AbundanceMatrix`.
    """
    if isinstance(obj, HyperCube):
        return _validate_cube(obj)
    if isinstance(obj, EndmemberMatrix):
        return _validate_endmembers(obj)
    if isinstance(obj, AbundanceMatrix):
        return _validate_abundances(obj)
    raise TypeError(f"validate() expects a domain type, got {type(obj).__name__}")


def _validate_cube(cube: HyperCube) -> Violation:
    bad = np.argwhere(~np.isfinite(cube.data))
    if bad.size:
        i, j = bad[0]
        return Violation(False, "finite", (int(i), int(j)), float("nan"))
    if cube.wavelengths is not None:
        gaps = np.diff(cube.wavelengths)
        idx = np.nonzero(gaps <= 0)[0]
        if idx.size:
            i = int(idx[0])
            return Violation(False, "wavelength-order", (i,), float(gaps[i]))
    return OK


def _validate_endmembers(em: EndmemberMatrix) -> Violation:
    neg = np.argwhere(em.data < 0.0)
    if neg.size:
        i, j = neg[0]
        return Violation(False, "ENC", (int(i), int(j)), float(-em.data[i, j]))
    M = em.data
    for a in range(M.shape[1]):
        for b in range(a + 1, M.shape[1]):
            if np.array_equal(M[:, a], M[:, b]):
                return Violation(False, "duplicate-endmember", (a, b), 0.0)
    return OK


def _validate_abundances(ab: AbundanceMatrix) -> Violation:
    neg = np.argwhere(ab.data < 0.0)
    if neg.size:
        i, j = neg[0]
        return Violation(False, "ANC", (int(i), int(j)), float(-ab.data[i, j]))
    sums = ab.data.sum(axis=0)
    off = np.abs(sums - 1.0)
    idx = np.nonzero(off > ASC_TOL)[0]
    if idx.size:
        j = int(idx[0])
        return Violation(False, "ASC", (j,), float(sums[j] - 1.0))
    return OK
