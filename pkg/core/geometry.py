"""
Geometry — Linear-algebra kernel: ball vectors, subspaces, projections, caps, sectors,
principal angles and chordal distance.

Every value returned here is an immutable numpy array (writeable=False) so subspaces
and vectors can be shared between sessions and threads.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import linalg

from core.errors import DimensionMismatchError, NoComplementError

logger = logging.getLogger('batchbound.geometry')

# Tolerances
BALL_TOL = 1e-9
ORTHO_TOL = 1e-9
THRESHOLD_TOL = 1e-12   # |cos - gamma| at or below this counts as "not inside"
DEPENDENT_TOL = 1e-10   # MGS residual below this drops the column


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def ball_vector(coords: Iterable[float], d: int | None = None) -> np.ndarray:
    """Validate and freeze a point of the unit ball."""
    x = _frozen(np.fromiter(coords, dtype=float) if not isinstance(coords, np.ndarray) else coords)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"expected a non-empty 1-d vector, got shape {x.shape}")
    if d is not None and x.size != d:
        raise DimensionMismatchError(f"vector has length {x.size}, expected {d}")
    norm = float(np.linalg.norm(x))
    if norm > 1.0 + BALL_TOL:
        raise ValueError(f"vector norm {norm:.12f} is outside the unit ball")
    return x


def unit(index: int, d: int) -> np.ndarray:
    """Standard basis vector e_{index+1} of R^d."""
    e = np.zeros(d)
    e[index] = 1.0
    return _frozen(e)


def orthonormalize(vectors: Sequence[np.ndarray] | np.ndarray, d: int,
                   against: np.ndarray | None = None) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Returns a d x r matrix of orthonormal columns spanning the inputs (minus anything
    already in the span of `against`). Columns whose residual falls below DEPENDENT_TOL
    are dropped as dependent.
    """
    accepted: list[np.ndarray] = []
    fixed = [] if against is None else [against[:, j] for j in range(against.shape[1])]
    for raw in _columns(vectors, d):
        v = np.array(raw, dtype=float)
        for _ in range(2):
            for q in fixed:
                v -= (q @ v) * q
            for q in accepted:
                v -= (q @ v) * q
        norm = float(np.linalg.norm(v))
        if norm < DEPENDENT_TOL:
            continue
        accepted.append(v / norm)
    if not accepted:
        return np.zeros((d, 0))
    return np.column_stack(accepted)


def _columns(vectors: Sequence[np.ndarray] | np.ndarray, d: int) -> list[np.ndarray]:
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        if vectors.shape[0] != d:
            raise DimensionMismatchError(f"matrix has {vectors.shape[0]} rows, expected {d}")
        return [vectors[:, j] for j in range(vectors.shape[1])]
    cols = []
    for v in vectors:
        v = np.asarray(v, dtype=float)
        if v.shape != (d,):
            raise DimensionMismatchError(f"vector has shape {v.shape}, expected ({d},)")
        cols.append(v)
    return cols


class Subspace:
    """An m-dimensional subspace of R^d stored as a d x m orthonormal basis."""

    __slots__ = ('_basis',)

    def __init__(self, basis: np.ndarray):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim == 1:
            basis = basis.reshape(-1, 1)
        if basis.ndim != 2:
            raise ValueError(f"basis must be a matrix, got shape {basis.shape}")
        d, m = basis.shape
        if not 1 <= m <= d:
            raise ValueError(f"subspace dimension {m} must lie in [1, {d}]")
        gram = basis.T @ basis
        err = float(np.max(np.abs(gram - np.eye(m))))
        if err > ORTHO_TOL:
            raise ValueError(f"basis is not orthonormal (max deviation {err:.3e})")
        self._basis = _frozen(basis)

    # ─────────────────────── Constructors ───────────────────────

    @classmethod
    def span(cls, vectors: Sequence[np.ndarray] | np.ndarray, d: int) -> Subspace:
        """Span of arbitrary vectors; raises ValueError when they span {0}."""
        basis = orthonormalize(vectors, d)
        if basis.shape[1] == 0:
            raise ValueError("vectors span the zero subspace")
        return cls(basis)

    @classmethod
    def full(cls, d: int) -> Subspace:
        return cls(np.eye(d))

    @classmethod
    def standard(cls, d: int, m: int) -> Subspace:
        """Span of the first m standard basis vectors."""
        return cls(np.eye(d)[:, :m])

    # ─────────────────────── Properties ───────────────────────

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    @property
    def ambient_dim(self) -> int:
        return self._basis.shape[0]

    @property
    def dim(self) -> int:
        return self._basis.shape[1]

    def project(self, x: np.ndarray) -> np.ndarray:
        return project(x, self)

    def contains_subspace(self, other: Subspace, tol: float = ORTHO_TOL) -> bool:
        if other.ambient_dim != self.ambient_dim:
            return False
        residual = other.basis - self._basis @ (self._basis.T @ other.basis)
        return float(np.max(np.linalg.norm(residual, axis=0))) <= tol

    # ─────────────────────── Serialization ───────────────────────

    def to_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "dim": self.dim,
            "basis": [self._basis[:, j].tolist() for j in range(self.dim)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Subspace:
        columns = np.asarray(data["basis"], dtype=float)
        basis = columns.T
        if basis.shape != (int(data["ambient_dim"]), int(data["dim"])):
            raise DimensionMismatchError(
                f"basis shape {basis.shape} does not match "
                f"({data['ambient_dim']}, {data['dim']})"
            )
        return cls(basis)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Subspace):
            return NotImplemented
        return self.ambient_dim == other.ambient_dim and np.array_equal(self._basis, other._basis)

    def __hash__(self) -> int:
        return hash((self._basis.shape, self._basis.tobytes()))

    def __repr__(self) -> str:
        return f"Subspace(d={self.ambient_dim}, m={self.dim})"


class PrincipalAngles:
    """Principal angles in radians, sorted ascending."""

    __slots__ = ('angles', 'cosines')

    def __init__(self, cosines: np.ndarray):
        cosines = np.sort(np.clip(np.asarray(cosines, dtype=float), 0.0, 1.0))[::-1]
        self.cosines: tuple[float, ...] = tuple(float(c) for c in cosines)
        self.angles: tuple[float, ...] = tuple(math.acos(c) for c in self.cosines)

    def __len__(self) -> int:
        return len(self.angles)

    def __iter__(self):
        return iter(self.angles)

    def __repr__(self) -> str:
        return f"PrincipalAngles({[round(a, 6) for a in self.angles]})"


# ─────────────────────── Operations ───────────────────────

def _check_dim(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionMismatchError(f"vector has shape {x.shape}, subspace lives in R^{d}")
    return x


def project(x: np.ndarray, H: Subspace) -> np.ndarray:
    """Orthogonal projection basis @ (basis^T @ x)."""
    x = _check_dim(x, H.ambient_dim)
    return H.basis @ (H.basis.T @ x)


def cap_contains(w: np.ndarray, gamma: float, x: np.ndarray) -> bool:
    """x^T w / ||w|| > gamma. The norm of x is not divided out."""
    w = np.asarray(w, dtype=float)
    x = _check_dim(x, w.size)
    norm_w = float(np.linalg.norm(w))
    if norm_w == 0.0:
        raise ValueError("cap direction w must be nonzero")
    return float(x @ w) / norm_w - gamma > THRESHOLD_TOL


def sector_cosine(H: Subspace, x: np.ndarray) -> float:
    """||proj_H x|| / ||x||; zero for the zero vector."""
    x = _check_dim(x, H.ambient_dim)
    norm_x = float(np.linalg.norm(x))
    if norm_x == 0.0:
        return 0.0
    return float(np.linalg.norm(H.basis.T @ x)) / norm_x


def sector_contains(H: Subspace, gamma: float, x: np.ndarray) -> bool:
    """Membership in the gamma-sector of H. Two-sided in x; false for x = 0."""
    return sector_cosine(H, x) - gamma > THRESHOLD_TOL


def principal_angles(A: Subspace, B: Subspace) -> PrincipalAngles:
    if A.ambient_dim != B.ambient_dim:
        raise DimensionMismatchError(f"ambient dims differ: {A.ambient_dim} vs {B.ambient_dim}")
    if A.dim != B.dim:
        raise DimensionMismatchError(f"subspace dims differ: {A.dim} vs {B.dim}")
    return PrincipalAngles(linalg.svdvals(A.basis.T @ B.basis))


def chordal_distance(A: Subspace, B: Subspace) -> float:
    # sin^2 = 1 - cos^2, clamped at zero against round-off
    cosines = np.asarray(principal_angles(A, B).cosines)
    return math.sqrt(float(np.sum(np.maximum(0.0, 1.0 - cosines ** 2))))


def orthonormal_complement_basis(vectors: Sequence[np.ndarray], d: int) -> Subspace:
    """Orthogonal complement of span(vectors), built deterministically from e_1..e_d."""
    spanned = orthonormalize(vectors, d)
    if spanned.shape[1] >= d:
        raise NoComplementError()
    complement = orthonormalize(np.eye(d), d, against=spanned)
    return Subspace(complement[:, : d - spanned.shape[1]])


def restrict_and_lift(B: Subspace, points: Sequence[np.ndarray],
                      inner_find: Callable[[list[np.ndarray], int], Subspace]) -> Subspace:
    """Run `inner_find` in B's own coordinates and lift its answer back into R^d.

    Coordinates of proj_B(p) in B's basis are just B^T p, so the isomorphism is the
    basis itself. The lifted subspace lies inside B.
    """
    restricted = [B.basis.T @ _check_dim(p, B.ambient_dim) for p in points]
    inner = inner_find(restricted, B.dim)
    if inner.ambient_dim != B.dim:
        raise DimensionMismatchError(
            f"inner search returned a subspace of R^{inner.ambient_dim}, expected R^{B.dim}"
        )
    lifted = B.basis @ inner.basis
    # re-orthonormalize to wash out round-off from the product
    return Subspace(orthonormalize(lifted, B.ambient_dim))


def random_unit(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return _frozen(v / np.linalg.norm(v))


def random_subspace(d: int, m: int, rng: np.random.Generator) -> Subspace:
    """Haar-distributed subspace via QR of a Gaussian matrix with the diagonal sign fix."""
    gaussian = rng.standard_normal((d, m))
    q, r = np.linalg.qr(gaussian)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return Subspace(q * signs)
