"""Per-symbol transform coding of a dataset for inner-product recovery.

Encoder: whiten rows with x' = U^T Qy^{1/2} x so that the components are
uncorrelated with variances Lambda_i, then quantize component i with an
R_i-bit equiprobable-bin scalar quantizer for N(0, Lambda_i).  Decoder maps
the bin centroids back with Qy^{-1/2} U.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from .errors import CorruptIndex, DimensionMismatch, RateTooLarge
from .numerics import ProductSpectrum, _as_spd, product_spectrum

MAX_RATE = 16
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ScalarQuantizer:
    """Equiprobable-bin quantizer for a standard normal variable.

    ``boundaries`` has 2^R + 1 entries starting at -inf and ending at +inf;
    ``centroids`` holds the conditional mean of each bin.
    """

    rate_bits: int
    boundaries: np.ndarray
    centroids: np.ndarray
    centroid_variance: float

    @property
    def levels(self) -> int:
        return 1 << self.rate_bits

    @property
    def unit_distortion(self) -> float:
        """e(1, R) = 1 - sigma_c^2."""
        return 1.0 - self.centroid_variance

    def quantize(self, u: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Bin index of each entry of ``u`` under the quantizer scaled by ``scale``."""
        u = np.asarray(u, dtype=float)
        if self.rate_bits == 0:
            return np.zeros(u.shape, dtype=np.int64)
        if scale <= 0:
            return np.zeros(u.shape, dtype=np.int64)
        inner = self.boundaries[1:-1]
        return np.searchsorted(inner, u / scale, side="right").astype(np.int64)

    def reconstruct(self, idx: np.ndarray, scale: float = 1.0) -> np.ndarray:
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.levels):
            raise CorruptIndex(f"index outside [0, {self.levels}) for a {self.rate_bits}-bit quantizer")
        return scale * self.centroids[idx]


@lru_cache(maxsize=None)
def build_quantizer(rate_bits: int) -> ScalarQuantizer:
    r = int(rate_bits)
    if r != rate_bits or r < 0:
        raise ValueError(f"rate must be a nonnegative integer, got {rate_bits!r}")
    if r > MAX_RATE:
        raise RateTooLarge(f"rate {r} exceeds the {MAX_RATE}-bit codebook limit")
    levels = 1 << r
    if r == 0:
        b = np.array([-np.inf, np.inf])
        c = np.zeros(1)
    else:
        # upper half only, mirrored, so the codebook is exactly symmetric
        half = levels // 2
        upper = ndtri(np.arange(half + 1, levels) / levels)
        b_pos = np.concatenate([[0.0], upper, [np.inf]])
        lo, hi = b_pos[:-1], b_pos[1:]
        g_lo = np.exp(-0.5 * lo**2)
        # exp(-a^2/2) - exp(-b^2/2), computed without cancellation
        with np.errstate(invalid="ignore"):
            diff = -g_lo * np.expm1(-0.5 * (hi**2 - lo**2))
        diff[-1] = g_lo[-1]
        c_pos = levels * _INV_SQRT_2PI * diff
        b = np.concatenate([-b_pos[:0:-1], b_pos])
        c = np.concatenate([-c_pos[::-1], c_pos])
    for arr in (b, c):
        arr.flags.writeable = False
    return ScalarQuantizer(
        rate_bits=r,
        boundaries=b,
        centroids=c,
        centroid_variance=float(np.sum(c**2) / levels),
    )


@lru_cache(maxsize=1)
def unit_distortion_table() -> np.ndarray:
    """e(1, R) for R = 0 .. MAX_RATE."""
    t = np.array([build_quantizer(r).unit_distortion for r in range(MAX_RATE + 1)])
    t.flags.writeable = False
    return t


def per_dim_distortion(variance: float, quantizer: ScalarQuantizer | int) -> float:
    """e(sigma_u^2, R) = sigma_u^2 * e(1, R); centroids scale linearly with sigma_u."""
    if not isinstance(quantizer, ScalarQuantizer):
        quantizer = build_quantizer(quantizer)
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    return float(variance) * quantizer.unit_distortion


@dataclass(frozen=True)
class BitAllocation:
    per_dim_bits: np.ndarray
    total_bits: int
    predicted_distortion: float


def predicted_distortion(eigs, bits) -> float:
    table = unit_distortion_table()
    return float(np.sum(np.asarray(eigs, dtype=float) * table[np.asarray(bits, dtype=int)]))


def allocate_bits(spectrum_eigs, total_bits: int) -> BitAllocation:
    """Greedy bit loading: each bit goes to the component with the largest drop."""
    eigs = np.asarray(
        spectrum_eigs.eigenvalues if isinstance(spectrum_eigs, ProductSpectrum) else spectrum_eigs,
        dtype=float,
    )
    total = int(total_bits)
    if total != total_bits or total < 0:
        raise ValueError(f"total bits must be a nonnegative integer, got {total_bits!r}")
    if np.any(eigs < 0):
        raise ValueError("spectrum must be nonnegative")
    table = unit_distortion_table()
    gain = table[:-1] - table[1:]  # gain[r] = e(1, r) - e(1, r + 1)
    bits = np.zeros(eigs.shape[0], dtype=np.int64)
    live = eigs > 0
    if total > MAX_RATE * int(np.count_nonzero(live)):
        raise RateTooLarge(
            f"{total} bits exceed {MAX_RATE} bits for each of the "
            f"{int(np.count_nonzero(live))} nonzero components"
        )
    delta = np.where(live, eigs * gain[0], -np.inf)
    for _ in range(total):
        j = int(np.argmax(delta))  # first index wins ties
        bits[j] += 1
        delta[j] = eigs[j] * gain[bits[j]] if bits[j] < MAX_RATE else -np.inf
    bits.flags.writeable = False
    return BitAllocation(
        per_dim_bits=bits,
        total_bits=total,
        predicted_distortion=predicted_distortion(eigs, bits),
    )


HEADER_FIXED_BITS = 16 + 64  # d: u16, n: u64; plus 8 bits per dimension


@dataclass(frozen=True, eq=False)
class EncodedBatch:
    indices: np.ndarray
    allocation: BitAllocation
    transform: ProductSpectrum

    @property
    def n(self) -> int:
        return self.indices.shape[0]

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    @property
    def header_bits(self) -> int:
        return HEADER_FIXED_BITS + 8 * self.dim

    @property
    def payload_bits(self) -> int:
        return self.n * int(np.sum(self.allocation.per_dim_bits))

    @property
    def ledger_bits(self) -> int:
        return self.header_bits + self.payload_bits

    def to_bytes(self) -> bytes:
        return pack_indices(self.indices, self.allocation.per_dim_bits)


def encode(batch, qx, qy, total_bits_per_sample: int, spectrum: ProductSpectrum | None = None) -> EncodedBatch:
    """Quantize the rows of ``batch`` with R bits per row.

    ``qx`` describes the sender's data, ``qy`` the receiver's (the metric under
    which inner products are to be preserved).  A precomputed ``spectrum`` of
    the pair may be passed to skip the eigendecomposition.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if spectrum is None:
        spectrum = product_spectrum(_as_spd(qx), _as_spd(qy))
    if x.ndim != 2 or x.shape[1] != spectrum.dim:
        raise DimensionMismatch(f"batch has shape {x.shape}, transform has dim {spectrum.dim}")
    alloc = allocate_bits(spectrum.eigenvalues, total_bits_per_sample)
    xw = spectrum.whiten(x)
    idx = np.zeros(xw.shape, dtype=np.int64)
    for i, (r, lam) in enumerate(zip(alloc.per_dim_bits, spectrum.eigenvalues)):
        if r:
            idx[:, i] = build_quantizer(int(r)).quantize(xw[:, i], math.sqrt(lam))
    idx.flags.writeable = False
    return EncodedBatch(indices=idx, allocation=alloc, transform=spectrum)


def decode(enc: EncodedBatch) -> np.ndarray:
    spectrum = enc.transform
    xw = np.zeros(enc.indices.shape)
    for i, (r, lam) in enumerate(zip(enc.allocation.per_dim_bits, spectrum.eigenvalues)):
        col = enc.indices[:, i]
        if r == 0:
            if np.any(col != 0):
                raise CorruptIndex(f"dimension {i} has 0 bits but nonzero indices")
            continue
        xw[:, i] = build_quantizer(int(r)).reconstruct(col, math.sqrt(lam))
    return spectrum.unwhiten(xw)


def measure_distortion(original, reconstructed, metric) -> float:
    """(1/n) sum_i (x_i - x_hat_i)^T M (x_i - x_hat_i)."""
    x = np.atleast_2d(np.asarray(original, dtype=float))
    xh = np.atleast_2d(np.asarray(reconstructed, dtype=float))
    m = np.asarray(metric, dtype=float)
    if x.shape != xh.shape or m.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(
            f"original {x.shape}, reconstructed {xh.shape}, metric {m.shape}"
        )
    e = x - xh
    return float(np.einsum("ij,jk,ik->", e, m, e) / x.shape[0])


# --- wire format -----------------------------------------------------------
# header: d (u16), per-dimension bits (d x u8), n (u64), all big-endian;
# then row-major indices, dimension i using exactly R_i bits, MSB first.
# The stream is zero-padded to a whole byte only at the very end.


def _bits_of(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint64)
    return ((values.astype(np.uint64)[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)


def _read_bits(bits: np.ndarray, width: int) -> np.ndarray:
    weights = (np.uint64(1) << np.arange(width - 1, -1, -1, dtype=np.uint64))
    return (bits.astype(np.uint64) * weights).sum(axis=-1)


def pack_indices(indices: np.ndarray, per_dim_bits) -> bytes:
    idx = np.asarray(indices, dtype=np.int64)
    bits = np.asarray(per_dim_bits, dtype=np.int64)
    n, d = idx.shape
    if bits.shape != (d,):
        raise DimensionMismatch("allocation length does not match index width")
    if d >= 1 << 16:
        raise DimensionMismatch("dimension does not fit the u16 header field")
    for i, r in enumerate(bits):
        if idx.size and (idx[:, i].min() < 0 or idx[:, i].max() >= (1 << int(r))):
            raise CorruptIndex(f"dimension {i}: index does not fit in {int(r)} bits")
    parts = [
        _bits_of(np.array([d]), 16),
        _bits_of(bits, 8),
        _bits_of(np.array([n]), 64),
    ]
    header = np.concatenate([p.ravel() for p in parts])
    cols = [_bits_of(idx[:, i], int(r)) for i, r in enumerate(bits) if r]
    payload = np.concatenate(cols, axis=1).ravel() if cols else np.zeros(0, np.uint8)
    return np.packbits(np.concatenate([header, payload])).tobytes()


def unpack_indices(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`pack_indices`; returns (indices, per_dim_bits)."""
    stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if stream.size < 16:
        raise CorruptIndex("truncated header")
    d = int(_read_bits(stream[:16], 16))
    pos = 16
    if stream.size < pos + 8 * d + 64:
        raise CorruptIndex("truncated header")
    bits = _read_bits(stream[pos:pos + 8 * d].reshape(d, 8), 8).astype(np.int64)
    pos += 8 * d
    n = int(_read_bits(stream[pos:pos + 64], 64))
    pos += 64
    if np.any(bits > MAX_RATE):
        raise CorruptIndex("per-dimension rate exceeds codebook limit")
    row_bits = int(bits.sum())
    total = pos + n * row_bits
    if stream.size < total or stream.size - total >= 8:
        raise CorruptIndex(f"payload length mismatch: expected {total} bits")
    payload = stream[pos:total].reshape(n, row_bits)
    idx = np.zeros((n, d), dtype=np.int64)
    col = 0
    for i, r in enumerate(bits):
        r = int(r)
        if r:
            idx[:, i] = _read_bits(payload[:, col:col + r], r)
            col += r
    return idx, bits


def decode_bytes(data: bytes, transform: ProductSpectrum) -> EncodedBatch:
    """Rebuild an :class:`EncodedBatch` from its wire form and the shared transform."""
    idx, bits = unpack_indices(data)
    if idx.shape[1] != transform.dim:
        raise DimensionMismatch("wire dimension does not match transform")
    eigs = transform.eigenvalues
    alloc = BitAllocation(
        per_dim_bits=bits,
        total_bits=int(bits.sum()),
        predicted_distortion=predicted_distortion(eigs, bits),
    )
    return EncodedBatch(indices=idx, allocation=alloc, transform=transform)
