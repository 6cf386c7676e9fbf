"""Coefficient fields and the pointwise Gram-Schmidt factorization A = B^T B."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from plaplab.errors import InvalidArgument, PreconditionViolation
from plaplab.geometry import Mesh

__all__ = [
    "ScalarField",
    "MatrixField",
    "HolderReport",
    "gram_schmidt_factor",
    "spd_factorize",
    "holder_report",
    "scalar_from_function",
    "identity_matrix_field",
]

SYMMETRY_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Positive cellwise scalar (a conductivity) bounded below by ``lower_bound``."""

    cell_values: np.ndarray
    lower_bound: float | None = None

    def __post_init__(self):
        v = np.array(self.cell_values, dtype=float).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "cell_values", v)
        if not np.all(np.isfinite(v)):
            raise PreconditionViolation("scalar field has non-finite values")
        c0 = float(v.min()) if self.lower_bound is None else float(self.lower_bound)
        if not c0 > 0.0:
            raise PreconditionViolation(f"lower bound must be positive, got {c0}")
        bad = np.flatnonzero(v < c0)
        if bad.size:
            raise PreconditionViolation(
                f"cell {bad[0]} value {v[bad[0]]} is below the lower bound {c0}", cell=int(bad[0])
            )
        object.__setattr__(self, "lower_bound", c0)

    def __len__(self):
        return len(self.cell_values)

    @classmethod
    def constant(cls, mesh: Mesh, c: float) -> "ScalarField":
        return cls(np.full(mesh.n_cells, float(c)))

    def scaled(self, c: float) -> "ScalarField":
        return ScalarField(c * self.cell_values)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Cellwise symmetric positive-definite 2x2 matrices."""

    cell_matrices: np.ndarray
    ellipticity_bound: float | None = None

    def __post_init__(self):
        M = np.array(self.cell_matrices, dtype=float)
        if M.ndim != 3 or M.shape[1:] != (2, 2):
            raise InvalidArgument(f"matrix field must have shape (T, 2, 2), got {M.shape}")
        M.setflags(write=False)
        object.__setattr__(self, "cell_matrices", M)
        scale = np.maximum(np.abs(M).max(axis=(1, 2)), 1.0)
        asym = np.abs(M[:, 0, 1] - M[:, 1, 0]) / scale
        bad = np.flatnonzero(asym > SYMMETRY_TOL)
        if bad.size:
            raise PreconditionViolation(f"cell {bad[0]} matrix is not symmetric", cell=int(bad[0]))
        lam = self.min_eigenvalues()
        c0 = float(lam.min()) if self.ellipticity_bound is None else float(self.ellipticity_bound)
        if not c0 > 0.0:
            bad = np.flatnonzero(lam <= 0.0)
            cell = int(bad[0]) if bad.size else None
            raise PreconditionViolation(f"matrix field is not positive definite (cell {cell})", cell=cell)
        bad = np.flatnonzero(lam < c0)
        if bad.size:
            raise PreconditionViolation(
                f"cell {bad[0]} smallest eigenvalue {lam[bad[0]]} below bound {c0}", cell=int(bad[0])
            )
        object.__setattr__(self, "ellipticity_bound", c0)

    def __len__(self):
        return len(self.cell_matrices)

    def min_eigenvalues(self) -> np.ndarray:
        M = self.cell_matrices
        a, b, d = M[:, 0, 0], 0.5 * (M[:, 0, 1] + M[:, 1, 0]), M[:, 1, 1]
        return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)

    @classmethod
    def identity(cls, mesh: Mesh) -> "MatrixField":
        return cls(np.broadcast_to(np.eye(2), (mesh.n_cells, 2, 2)))

    def is_identity(self) -> bool:
        return bool(np.all(self.cell_matrices == np.eye(2)))


def identity_matrix_field(mesh: Mesh) -> MatrixField:
    return MatrixField.identity(mesh)


def scalar_from_function(mesh: Mesh, func) -> ScalarField:
    """Sample ``func(x1, x2)`` at cell centroids."""
    c = mesh.centroids
    values = np.broadcast_to(np.asarray(func(c[:, 0], c[:, 1]), dtype=float), (mesh.n_cells,))
    return ScalarField(values.copy())


def gram_schmidt_factor(A) -> np.ndarray:
    """Return B with B^T B = A for one SPD matrix or a stack of them.

    The columns of V are the standard basis e_1, ..., e_n orthonormalised in
    the inner product <v, w>_A = A v . w, always in that order; B = V^{-1}.
    """
    M = np.asarray(A, dtype=float)
    single = M.ndim == 2
    if single:
        M = M[None]
    T, n, _ = M.shape
    V = np.zeros_like(M)
    for k in range(n):
        w = np.zeros((T, n))
        w[:, k] = 1.0
        Ae_k = M[:, :, k]
        for j in range(k):
            coef = np.einsum("ti,ti->t", Ae_k, V[:, :, j])
            w = w - coef[:, None] * V[:, :, j]
        norm2 = np.einsum("ti,tij,tj->t", w, M, w)
        bad = np.flatnonzero(~(norm2 > 0.0))
        if bad.size:
            raise PreconditionViolation(
                f"cell {bad[0]} matrix is not positive definite", cell=int(bad[0])
            )
        V[:, :, k] = w / np.sqrt(norm2)[:, None]
    B = np.linalg.inv(V)
    return B[0] if single else B


def spd_factorize(A) -> np.ndarray:
    """Cellwise factor B (T, 2, 2) with B^T B = A.

    ``A`` is a :class:`MatrixField` or a raw (T, n, n) stack. B is upper
    triangular (a consequence of orthonormalising e_1 first) and generally
    not symmetric, so it is returned as an array rather than a field.
    """
    M = A.cell_matrices if isinstance(A, MatrixField) else np.asarray(A, dtype=float)
    if M.ndim == 2:
        M = M[None]
    scale = np.maximum(np.abs(M).max(axis=(1, 2)), 1.0)
    asym = np.abs(M - np.swapaxes(M, 1, 2)).max(axis=(1, 2))
    bad = np.flatnonzero(asym > SYMMETRY_TOL * scale)
    if bad.size:
        raise PreconditionViolation(f"cell {bad[0]} matrix is not symmetric", cell=int(bad[0]))
    return gram_schmidt_factor(M)


@dataclass(frozen=True)
class HolderReport:
    sup_norm: float
    holder_seminorm: float
    alpha: float

    @property
    def norm(self) -> float:
        return self.sup_norm + self.holder_seminorm


def holder_report(values, points, alpha: float) -> HolderReport:
    """Discrete sup norm and alpha-Holder seminorm over sample points.

    ``values`` are samples at ``points`` (e.g. nodal values at mesh vertices,
    or cell values at centroids). The seminorm is the brute-force maximum of
    |f(x) - f(y)| / |x - y|^alpha over distinct point pairs.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha}")
    f = np.asarray(values, dtype=float).ravel()
    X = np.asarray(points, dtype=float)
    if len(X) != len(f):
        raise InvalidArgument("values and points differ in length")
    sup = float(np.max(np.abs(f))) if f.size else 0.0
    semi = 0.0
    # row blocks keep the O(V^2) scan within memory
    for start in range(0, len(f), 512):
        d = np.linalg.norm(X[start : start + 512, None, :] - X[None, :, :], axis=-1)
        df = np.abs(f[start : start + 512, None] - f[None, :])
        mask = d > 0.0
        if mask.any():
            semi = max(semi, float(np.max(df[mask] / d[mask] ** alpha)))
    return HolderReport(sup, semi, float(alpha))
