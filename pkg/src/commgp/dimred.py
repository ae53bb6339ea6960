"""Linear dimension reduction that minimizes inner-product distortion.

The basis spans the top-m right eigenvectors of Sx Sy; with Sy = I this is
ordinary PCA, which is also provided as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadTargetDim, DimensionMismatch
from .numerics import _as_spd, product_spectrum

# bits used for each transmitted coefficient in rate accounting
COEFF_BITS = 16


@dataclass(frozen=True, eq=False)
class DimRedModel:
    basis: np.ndarray          # d x m, orthonormal columns
    coeff_map: np.ndarray      # m x d
    target_dim: int
    predicted_distortion: float
    eigenvalues: np.ndarray    # full spectrum of Sx Sy (or Sx for PCA), descending

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def _check_m(m: int, d: int) -> int:
    if int(m) != m or not 1 <= m <= d:
        raise BadTargetDim(f"target dimension must be in [1, {d}], got {m!r}")
    return int(m)


def fit(sx, sy, m: int) -> DimRedModel:
    sx, sy = _as_spd(sx), _as_spd(sy)
    m = _check_m(m, sx.dim)
    spec = product_spectrum(sx, sy)
    # right eigenvectors of Sx Sy are Sy^{-1/2} w for eigenvectors w of Sy^{1/2} Sx Sy^{1/2}
    v = spec.y_inv_sqrt.entries @ spec.basis[:, :m]
    u, _ = np.linalg.qr(v)
    sy_m = sy.entries
    a = np.linalg.inv(u.T @ sy_m @ u)
    coeff_map = a @ u.T @ sy_m
    eigs = spec.eigenvalues
    for arr in (u, coeff_map):
        arr.flags.writeable = False
    return DimRedModel(
        basis=u,
        coeff_map=coeff_map,
        target_dim=m,
        predicted_distortion=float(np.sum(eigs[m:])),
        eigenvalues=eigs,
    )


def fit_pca(sx, m: int) -> DimRedModel:
    sx = _as_spd(sx)
    m = _check_m(m, sx.dim)
    u = np.array(sx.eigenvectors[:, :m])
    coeff_map = u.T.copy()
    for arr in (u, coeff_map):
        arr.flags.writeable = False
    return DimRedModel(
        basis=u,
        coeff_map=coeff_map,
        target_dim=m,
        predicted_distortion=float(np.sum(sx.eigenvalues[m:])),
        eigenvalues=sx.eigenvalues,
    )


def encode_dr(model: DimRedModel, batch) -> np.ndarray:
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if x.shape[1] != model.dim:
        raise DimensionMismatch(f"batch has {x.shape[1]} columns, model expects {model.dim}")
    return x @ model.coeff_map.T


def decode_dr(model: DimRedModel, coeffs) -> np.ndarray:
    z = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if z.shape[1] != model.target_dim:
        raise DimensionMismatch(f"coefficients have {z.shape[1]} columns, model has {model.target_dim}")
    return z @ model.basis.T


def subspace_distortion(basis: np.ndarray, sx, sy) -> float:
    """Distortion tr(Sx Sy) - tr(A U^T Sy Sx Sy U) of the best coefficients on span(U)."""
    sx, sy = np.asarray(sx, dtype=float), np.asarray(sy, dtype=float)
    u = np.asarray(basis, dtype=float)
    a = np.linalg.inv(u.T @ sy @ u)
    return float(np.trace(sx @ sy) - np.trace(a @ u.T @ sy @ sx @ sy @ u))


# --- wire format: header d (u16), m (u16), n (u64); basis d*m float64;
# per-coefficient scales m float64; coefficients n*m signed 16-bit fixed point.


@dataclass(frozen=True, eq=False)
class EncodedCoefficients:
    basis: np.ndarray
    scales: np.ndarray
    codes: np.ndarray  # n x m int16

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def header_bits(self) -> int:
        d, m = self.basis.shape
        return 16 + 16 + 64 + 64 * d * m + 64 * m

    @property
    def payload_bits(self) -> int:
        return COEFF_BITS * self.codes.size

    @property
    def ledger_bits(self) -> int:
        return self.header_bits + self.payload_bits

    def to_bytes(self) -> bytes:
        d, m = self.basis.shape
        head = np.array([d, m], dtype=">u2").tobytes() + np.array([self.n], dtype=">u8").tobytes()
        return (
            head
            + self.basis.astype(">f8").tobytes()
            + self.scales.astype(">f8").tobytes()
            + self.codes.astype(">i2").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedCoefficients":
        d, m = np.frombuffer(data[:4], dtype=">u2").astype(int)
        n = int(np.frombuffer(data[4:12], dtype=">u8")[0])
        pos = 12
        basis = np.frombuffer(data[pos:pos + 8 * d * m], dtype=">f8").reshape(d, m).astype(float)
        pos += 8 * d * m
        scales = np.frombuffer(data[pos:pos + 8 * m], dtype=">f8").astype(float)
        pos += 8 * m
        if len(data) != pos + 2 * n * m:
            raise DimensionMismatch("coefficient payload length mismatch")
        codes = np.frombuffer(data[pos:], dtype=">i2").reshape(n, m).astype(np.int16)
        return cls(basis=basis, scales=scales, codes=codes)


_QMAX = (1 << (COEFF_BITS - 1)) - 1


def quantize_coefficients(model: DimRedModel, z: np.ndarray) -> EncodedCoefficients:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    scales = np.max(np.abs(z), axis=0) / _QMAX
    scales = np.where(scales > 0, scales, 1.0)
    codes = np.clip(np.rint(z / scales), -_QMAX, _QMAX).astype(np.int16)
    return EncodedCoefficients(basis=np.array(model.basis), scales=scales, codes=codes)


def dequantize_coefficients(enc: EncodedCoefficients) -> np.ndarray:
    """Reconstruct rows x_hat = U z from the wire representation."""
    return (enc.codes.astype(float) * enc.scales) @ enc.basis.T
