"""Dense symmetric linear algebra used by the codecs.

Everything here is immutable: matrices are copied on construction and the
underlying arrays are flagged read-only, so instances can be shared freely
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_RTOL = 1e-10
# eigenvalues in [-CLAMP_RTOL * lambda_max, 0) are treated as rounding noise
CLAMP_RTOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


def sorted_eigh(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition sorted by (eigenvalue desc, index asc)."""
    w, v = np.linalg.eigh(m)
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def clamp_spectrum(w: np.ndarray) -> np.ndarray:
    """Zero out tiny negative eigenvalues; raise on genuinely negative ones."""
    top = max(float(np.max(w)), 0.0) if w.size else 0.0
    floor = -CLAMP_RTOL * top
    if np.any(w < floor) or (top == 0.0 and np.any(w < 0)):
        raise NotPositiveDefinite(
            f"matrix is indefinite: smallest eigenvalue {float(np.min(w)):.3e}, "
            f"largest {top:.3e}"
        )
    return np.where(w < 0, 0.0, w)


@dataclass(frozen=True, eq=False)
class SpdMatrix:
    """Symmetric positive semi-definite matrix with cached eigendecomposition."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise DimensionMismatch(f"expected a non-empty square matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NotPositiveDefinite("matrix has non-finite entries")
        scale = max(float(np.max(np.abs(m))), np.finfo(float).tiny)
        if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
            raise NotPositiveDefinite("matrix is not symmetric")
        object.__setattr__(self, "entries", _frozen(0.5 * (m + m.T)))
        # validates the PSD invariant eagerly
        _ = self.eigenvalues

    @classmethod
    def identity(cls, d: int) -> "SpdMatrix":
        return cls(np.eye(d))

    @classmethod
    def diag(cls, values) -> "SpdMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        w, v = sorted_eigh(self.entries)
        return _frozen(clamp_spectrum(w)), _frozen(v)

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in descending order, negatives clamped to zero."""
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eig[1]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def is_positive_definite(self) -> bool:
        w = self.eigenvalues
        return bool(w[-1] > CLAMP_RTOL * w[0])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __repr__(self):
        return f"SpdMatrix(dim={self.dim}, trace={self.trace:.6g})"


def _as_spd(m) -> SpdMatrix:
    return m if isinstance(m, SpdMatrix) else SpdMatrix(np.asarray(m, dtype=float))


def spd_sqrt(m) -> SpdMatrix:
    """Symmetric square root S with S @ S == m."""
    m = _as_spd(m)
    w, v = m.eigenvalues, m.eigenvectors
    return SpdMatrix((v * np.sqrt(w)) @ v.T)


def spd_inv_sqrt(m) -> SpdMatrix:
    """Symmetric inverse square root; requires a strictly positive definite input."""
    m = _as_spd(m)
    if not m.is_positive_definite():
        raise NotPositiveDefinite(
            f"inverse square root needs a positive definite matrix "
            f"(eigenvalue range {m.eigenvalues[-1]:.3e} .. {m.eigenvalues[0]:.3e})"
        )
    w, v = m.eigenvalues, m.eigenvectors
    return SpdMatrix((v / np.sqrt(w)) @ v.T)


@dataclass(frozen=True, eq=False)
class ProductSpectrum:
    """Eigen-structure of Qy^{1/2} Qx Qy^{1/2} = U diag(eigenvalues) U^T.

    The eigenvalues coincide with those of the (non-symmetric) product Qx Qy.
    """

    eigenvalues: np.ndarray
    basis: np.ndarray
    y_sqrt: SpdMatrix
    y_inv_sqrt: SpdMatrix

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Rows x_i -> U^T Qy^{1/2} x_i."""
        return np.asarray(x, dtype=float) @ self.y_sqrt.entries @ self.basis

    def unwhiten(self, xw: np.ndarray) -> np.ndarray:
        """Rows x'_i -> Qy^{-1/2} U x'_i."""
        return np.asarray(xw, dtype=float) @ self.basis.T @ self.y_inv_sqrt.entries


def product_spectrum(qx, qy) -> ProductSpectrum:
    qx, qy = _as_spd(qx), _as_spd(qy)
    if qx.dim != qy.dim:
        raise DimensionMismatch(f"qx is {qx.dim}x{qx.dim} but qy is {qy.dim}x{qy.dim}")
    ys = spd_sqrt(qy)
    yis = spd_inv_sqrt(qy)
    m = ys.entries @ qx.entries @ ys.entries
    w, u = sorted_eigh(0.5 * (m + m.T))
    return ProductSpectrum(
        eigenvalues=_frozen(clamp_spectrum(w)),
        basis=_frozen(u),
        y_sqrt=ys,
        y_inv_sqrt=yis,
    )


def second_moment(x: np.ndarray) -> SpdMatrix:
    """(1/n) X^T X for rows of X (callers pass centered data)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionMismatch(f"expected a non-empty n x d array, got {x.shape}")
    return SpdMatrix(x.T @ x / x.shape[0])
