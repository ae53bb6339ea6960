"""Rate-distortion lower bound for inner-product preserving compression.

The bound is reverse water-filling on the spectrum of Qx Qy: every spectral
component i receives distortion q_i = min(theta, Lambda_i) with theta chosen
so that the q_i add up to the target distortion.  For Gaussian sources the
bound is achieved by the test channel x = x_hat + z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DistortionOutOfRange, RateTooLarge
from .numerics import ProductSpectrum, SpdMatrix, _as_spd, product_spectrum

MAX_BISECTIONS = 200
LOG2E = 1.0 / math.log(2.0)


@dataclass(frozen=True)
class WaterFillSolution:
    threshold: float
    per_dim_distortion: np.ndarray
    total_distortion: float
    rate_bits: float


def _eigs(spectrum) -> np.ndarray:
    if isinstance(spectrum, ProductSpectrum):
        return np.asarray(spectrum.eigenvalues, dtype=float)
    return np.asarray(spectrum, dtype=float)


def gaussian_rate(eigs: np.ndarray, q: np.ndarray) -> float:
    """1/2 sum log2(Lambda_i / q_i); components with Lambda_i == 0 cost nothing."""
    live = eigs > 0
    return float(0.5 * np.sum(np.log(eigs[live] / q[live])) * LOG2E)


def _polish(eigs: np.ndarray, theta: float, target: float) -> float:
    # Within the active set the level is linear in D, so it can be solved exactly.
    active = eigs > theta
    k = int(np.count_nonzero(active))
    if k == 0:
        return theta
    exact = (target - float(np.sum(eigs[~active]))) / k
    if exact > 0 and np.all(eigs[active] >= exact) and np.all(eigs[~active] <= exact):
        return exact
    return theta


def water_fill(spectrum, target_distortion: float) -> WaterFillSolution:
    """Reverse water-filling q_i = min(theta, Lambda_i) with sum q_i = D."""
    eigs = _eigs(spectrum)
    total = float(np.sum(eigs))
    d = float(target_distortion)
    if not (d > 0) or d > total * (1 + 1e-12):
        raise DistortionOutOfRange(
            f"target distortion {d!r} outside (0, {total!r}]"
        )
    d = min(d, total)
    lo, hi = 0.0, float(np.max(eigs))
    theta = hi
    for _ in range(MAX_BISECTIONS):
        theta = 0.5 * (lo + hi)
        s = float(np.sum(np.minimum(theta, eigs)))
        if abs(s - d) <= 1e-15 * d or hi - lo <= 1e-16 * hi:
            break
        if s < d:
            lo = theta
        else:
            hi = theta
    if d >= total:
        theta = float(np.max(eigs))
    else:
        theta = _polish(eigs, theta, d)
    q = np.minimum(theta, eigs)
    return WaterFillSolution(
        threshold=theta,
        per_dim_distortion=q,
        total_distortion=float(np.sum(q)),
        rate_bits=gaussian_rate(eigs, q),
    )


def rate_lower_bound(qx, qy, distortion: float, source_entropy_bits: float | None = None) -> float:
    """Lower bound on bits per sample needed to reach the given distortion.

    With ``source_entropy_bits`` absent the source is Gaussian with covariance
    qx, in which case the bound is tight.  Otherwise h(x) (differential entropy,
    bits) must be supplied by the caller.
    """
    qx, qy = _as_spd(qx), _as_spd(qy)
    spec = product_spectrum(qx, qy)
    sol = water_fill(spec, distortion)
    if source_entropy_bits is None:
        return max(sol.rate_bits, 0.0)
    d = qy.dim
    # h(x) - 1/2 log2((2 pi e)^d det Qy^{-1}) - 1/2 sum log2 q_i
    logdet_qy = float(np.sum(np.log(qy.eigenvalues)))
    q = sol.per_dim_distortion
    if np.any(q <= 0):
        return math.inf
    bound = (
        source_entropy_bits
        - 0.5 * d * math.log2(2 * math.pi * math.e)
        - 0.5 * (-logdet_qy) * LOG2E
        - 0.5 * float(np.sum(np.log2(q)))
    )
    return max(bound, 0.0)


def gaussian_entropy_bits(cov) -> float:
    cov = _as_spd(cov)
    w = cov.eigenvalues
    return 0.5 * (cov.dim * math.log2(2 * math.pi * math.e) + float(np.sum(np.log2(w))))


def distortion_at_rate(spectrum, rate_bits: float) -> float:
    """Inverse of the Gaussian bound: smallest distortion reachable at ``rate_bits``."""
    eigs = _eigs(spectrum)
    if rate_bits < 0:
        raise RateTooLarge("rate must be nonnegative")
    if rate_bits == 0 or not np.any(eigs > 0):
        return float(np.sum(eigs))
    # rate is decreasing in theta; bisect in log-space since theta spans decades
    live = eigs[eigs > 0]
    lo, hi = math.log(live.min()) - rate_bits * 2 * math.log(2) - 1, math.log(live.max())
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        q = np.minimum(math.exp(mid), eigs)
        if gaussian_rate(eigs, q) > rate_bits:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return float(np.sum(np.minimum(math.exp(hi), eigs)))


@dataclass(frozen=True, eq=False)
class TestChannel:
    """x = x_hat + z with x_hat ~ N(0, Qx - Q), z ~ N(0, Q) independent."""

    reproduction_cov: SpdMatrix
    noise_cov: SpdMatrix
    # factors with F F^T equal to the two covariances, used for sampling
    reproduction_factor: np.ndarray
    noise_factor: np.ndarray
    solution: WaterFillSolution

    __test__ = False


def test_channel(qx, qy, distortion: float) -> TestChannel:
    qx, qy = _as_spd(qx), _as_spd(qy)
    spec = product_spectrum(qx, qy)
    sol = water_fill(spec, distortion)
    back = spec.y_inv_sqrt.entries @ spec.basis
    noise_f = back * np.sqrt(sol.per_dim_distortion)
    repro_f = back * np.sqrt(np.maximum(spec.eigenvalues - sol.per_dim_distortion, 0.0))
    return TestChannel(
        reproduction_cov=SpdMatrix(repro_f @ repro_f.T),
        noise_cov=SpdMatrix(noise_f @ noise_f.T),
        reproduction_factor=repro_f,
        noise_factor=noise_f,
        solution=sol,
    )


test_channel.__test__ = False


def simulate_test_channel(
    qx, qy, distortion: float, n_samples: int, seed: int, return_stderr: bool = False
):
    """Monte-Carlo distortion (1/n) sum (x - x_hat)^T Qy (x - x_hat) of the test channel."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    qy = _as_spd(qy)
    ch = test_channel(qx, qy, distortion)
    rng = np.random.default_rng(seed)
    d = qy.dim
    x_hat = rng.standard_normal((n_samples, d)) @ ch.reproduction_factor.T
    z = rng.standard_normal((n_samples, d)) @ ch.noise_factor.T
    x = x_hat + z
    err = x - x_hat
    per_sample = np.einsum("ij,jk,ik->i", err, qy.entries, err)
    mean = float(per_sample.mean())
    if not return_stderr:
        return mean
    sd = float(per_sample.std(ddof=1)) if n_samples > 1 else math.inf
    return mean, sd / math.sqrt(n_samples)
