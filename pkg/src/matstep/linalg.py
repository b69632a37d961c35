"""Dense symmetric linear algebra: eigendecompositions, PSD ordering,
weighted norms and determinant normalization.

Everything here works on small dense matrices (d up to a few hundred) and
favors accuracy over speed.  Determinants are handled in the log-eigenvalue
domain so that d-th roots of determinants stay finite at d ~ 100.
"""

from __future__ import annotations

import numpy as np


class InvalidMatrix(ValueError):
    """Matrix has non-finite entries or is not square."""


class DimError(ValueError):
    """Operands have incompatible dimensions."""


class NotPositiveDefinite(ValueError):
    """A positive definite matrix was required."""


# Relative eigenvalue floor below which a matrix is treated as singular.
# Smoothness matrices carry a +2*lambda*I shift, so genuine near-singularity
# signals a configuration error rather than a numerical accident.
TOL_PD = 1e-12


class SymmetricMatrix:
    """Dense symmetric d x d matrix with an eigendecomposition cache.

    The constructor symmetrizes its input as (A + A^T)/2 and eagerly
    computes the eigendecomposition; instances are immutable afterwards
    and safe to share across threads.
    """

    __slots__ = ("a", "eigenvalues", "eigenvectors")

    def __init__(self, entries):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidMatrix(f"expected a square matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidMatrix("matrix has non-finite entries")
        a = 0.5 * (arr + arr.T)
        w, v = np.linalg.eigh(a)
        a.setflags(write=False)
        w.setflags(write=False)
        v.setflags(write=False)
        self.a = a
        self.eigenvalues = w  # ascending
        self.eigenvectors = v  # orthonormal columns

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    def lmin(self) -> float:
        return float(self.eigenvalues[0])

    def lmax(self) -> float:
        return float(self.eigenvalues[-1])

    def __repr__(self) -> str:
        return f"SymmetricMatrix(dim={self.dim}, lmin={self.lmin():.3g}, lmax={self.lmax():.3g})"


def as_matrix(m) -> SymmetricMatrix:
    """Coerce an ndarray (or SymmetricMatrix) to SymmetricMatrix."""
    if isinstance(m, SymmetricMatrix):
        return m
    return SymmetricMatrix(m)


def identity(d: int) -> SymmetricMatrix:
    return SymmetricMatrix(np.eye(d))


def eig_sym(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, orthonormal eigenvectors as columns)
    such that A = V diag(w) V^T.
    """
    m = as_matrix(a)
    return m.eigenvalues, m.eigenvectors


def psd_geq(a, b, tol: float = 0.0) -> bool:
    """Test the generalized inequality A >= B, i.e. lmin(A - B) >= -tol."""
    ma, mb = as_matrix(a), as_matrix(b)
    if ma.dim != mb.dim:
        raise DimError(f"dimension mismatch: {ma.dim} vs {mb.dim}")
    diff = SymmetricMatrix(ma.a - mb.a)
    return diff.lmin() >= -tol


def weighted_norm_sq(x, q) -> float:
    """Quadratic form x^T Q x for positive definite Q."""
    m = as_matrix(q)
    if m.lmin() <= 0.0:
        raise NotPositiveDefinite(f"Q has lmin = {m.lmin():.3g}")
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise DimError(f"vector length {x.shape} does not match dim {m.dim}")
    return float(x @ (m.a @ x))


def _require_pd(m: SymmetricMatrix, what: str) -> None:
    if m.lmin() <= TOL_PD * max(1.0, m.lmax()):
        raise NotPositiveDefinite(f"{what} is not positive definite (lmin = {m.lmin():.3g})")


def det_normalized(d) -> tuple[float, SymmetricMatrix]:
    """Determinant normalizer det(D)^(1/d) and the normalized matrix D / det(D)^(1/d).

    The normalizer is computed as exp(mean(log eigenvalues)) so it cannot
    overflow; the normalized matrix has unit determinant.
    """
    m = as_matrix(d)
    if m.lmin() <= 0.0:
        raise NotPositiveDefinite(f"matrix has eigenvalue {m.lmin():.3g} <= 0")
    normalizer = float(np.exp(np.mean(np.log(m.eigenvalues))))
    return normalizer, SymmetricMatrix(m.a / normalizer)


def inv_psd(a) -> SymmetricMatrix:
    """Inverse of a positive definite matrix via V diag(1/w) V^T."""
    m = as_matrix(a)
    _require_pd(m, "matrix")
    v = m.eigenvectors
    return SymmetricMatrix((v / m.eigenvalues) @ v.T)


def sqrt_psd(a) -> SymmetricMatrix:
    """Symmetric square root A^(1/2) of a positive semi-definite matrix."""
    m = as_matrix(a)
    w = m.eigenvalues
    if w[0] < -TOL_PD * max(1.0, abs(w[-1])):
        raise NotPositiveDefinite(f"matrix has eigenvalue {w[0]:.3g} < 0")
    v = m.eigenvectors
    return SymmetricMatrix((v * np.sqrt(np.clip(w, 0.0, None))) @ v.T)


def inv_sqrt_psd(a) -> SymmetricMatrix:
    """A^(-1/2) for positive definite A."""
    m = as_matrix(a)
    _require_pd(m, "matrix")
    v = m.eigenvectors
    return SymmetricMatrix((v / np.sqrt(m.eigenvalues)) @ v.T)


def lmax_congruent(b, a) -> float:
    """lmax(A^(1/2) B A^(1/2)) for PD A and symmetric B.

    Equals lmax(A B) when both are PD; the congruent form keeps the
    argument symmetric so a symmetric eigensolver applies.
    """
    ah = sqrt_psd(a)
    mb = as_matrix(b)
    if ah.dim != mb.dim:
        raise DimError(f"dimension mismatch: {ah.dim} vs {mb.dim}")
    return SymmetricMatrix(ah.a @ mb.a @ ah.a).lmax()


def diag_inv(a) -> SymmetricMatrix:
    """diag(A)^(-1) for a matrix with strictly positive diagonal."""
    m = as_matrix(a)
    dg = np.diag(m.a).copy()
    if np.any(dg <= 0.0):
        raise NotPositiveDefinite("matrix has a non-positive diagonal entry")
    return SymmetricMatrix(np.diag(1.0 / dg))


def matrix_to_json(a) -> dict:
    """Serialize to {dim, row-major entries}."""
    m = as_matrix(a)
    return {"dim": m.dim, "entries": [float(x) for x in m.a.reshape(-1)]}


def matrix_from_json(obj) -> SymmetricMatrix:
    d = int(obj["dim"])
    entries = np.asarray(obj["entries"], dtype=float)
    if entries.size != d * d:
        raise InvalidMatrix(f"expected {d * d} entries, got {entries.size}")
    return SymmetricMatrix(entries.reshape(d, d))
