"""Simulated distributed GP learning under an explicit bit budget.

Machines exchange covariance matrices, then transmit their inputs through a
codec (per-symbol quantization, dimension reduction, or raw floats).  The
receiving machine builds the anchor rows of the gram matrix from its own
exact inputs against the decoded inputs and completes the rest with the
Nystrom approximation.  Every transmitted artifact is logged in a BitLedger
with its exact serialized size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from . import dimred, persym
from .errors import (
    DegeneratePrecision,
    DimensionMismatch,
    SingularAnchor,
)
from .gp import (
    LINEAR,
    GpModel,
    KernelSpec,
    assemble,
    exact_objective,
    fit_hyperparameters,
    gradient_ascent,
    gram_matrix,
    predict,
)
from .numerics import SpdMatrix, second_moment

FLOAT_BITS = 64
PAYLOAD_KINDS = ("covariance", "encoded_batch", "targets", "predictive", "header")
CODECS = ("persym", "dimred", "lossless")
BROADCAST = None  # receiver marker for a message delivered to every machine


@dataclass(frozen=True, eq=False)
class Machine:
    id: int
    local_inputs: np.ndarray
    local_targets: np.ndarray
    rng_seed: int = 0

    @property
    def n(self) -> int:
        return self.local_inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.local_inputs.shape[1]

    @cached_property
    def local_cov(self) -> SpdMatrix:
        """Second moment (1/n) X^T X of the (globally centered) local inputs."""
        return second_moment(self.local_inputs)


def split_dataset(X, y, machine_count: int, seed: int) -> list[Machine]:
    """Randomly distribute rows of (X, y) over machines of (near) equal size."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if machine_count < 1 or machine_count > X.shape[0]:
        raise ValueError(f"cannot split {X.shape[0]} rows over {machine_count} machines")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(X.shape[0])
    parts = np.array_split(perm, machine_count)
    return [Machine(i, X[p], y[p], rng_seed=seed * 1000 + i) for i, p in enumerate(parts)]


@dataclass(frozen=True)
class LedgerEntry:
    sender: int
    receiver: int | None
    payload_kind: str
    bits: int

    def as_dict(self) -> dict:
        return {
            "sender": self.sender,
            "receiver": "all" if self.receiver is None else self.receiver,
            "payload_kind": self.payload_kind,
            "bits": self.bits,
        }


@dataclass
class BitLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, sender: int, receiver: int | None, payload_kind: str, bits: int) -> None:
        if payload_kind not in PAYLOAD_KINDS:
            raise ValueError(f"unknown payload kind {payload_kind!r}")
        if int(bits) != bits or bits < 0:
            raise ValueError("bit counts are nonnegative integers")
        self.entries.append(LedgerEntry(sender, receiver, payload_kind, int(bits)))

    @property
    def total(self) -> int:
        return sum(e.bits for e in self.entries)

    def by_kind(self) -> dict[str, int]:
        out = dict.fromkeys(PAYLOAD_KINDS, 0)
        for e in self.entries:
            out[e.payload_kind] += e.bits
        return out

    def extend(self, other: "BitLedger") -> None:
        self.entries.extend(other.entries)

    def as_list(self) -> list[dict]:
        return [e.as_dict() for e in self.entries]


def covariance_bits(d: int) -> int:
    """Upper triangle of a symmetric d x d matrix as 64-bit floats."""
    return FLOAT_BITS * d * (d + 1) // 2


# --- Nystrom completion ------------------------------------------------------

ANCHOR_JITTER = (0.0, 1e-10, 1e-6)
# an unjittered factor is kept only if its smallest squared pivot exceeds this (relative)
PIVOT_FLOOR = 1e-14


def _anchor_cholesky(g_kk: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of the anchor block, adding relative jitter only when needed."""
    k = g_kk.shape[0]
    scale = float(np.trace(g_kk)) / k
    if not scale > 0:
        raise SingularAnchor("anchor block has zero trace")
    for rel in ANCHOR_JITTER:
        try:
            L = cholesky(g_kk + rel * scale * np.eye(k), lower=True)
        except np.linalg.LinAlgError:
            continue
        if rel > 0 or float(np.min(np.diag(L))) ** 2 >= PIVOT_FLOOR * scale:
            return L, rel
    raise SingularAnchor("anchor block is singular even after jitter")


def _jitter_correction(L: np.ndarray, V: np.ndarray, C: np.ndarray, eps: float) -> np.ndarray:
    """eps (L^-T V)^T (L^-T C): one step of iterated regularization.

    With M = G_KK and L L^T = M + eps I, adding this to V^T C replaces
    (M + eps I)^-1 by (M + eps I)^-1 (I + eps (M + eps I)^-1), which cancels the
    first-order jitter bias, so a rank-deficient anchor block still gives an
    exact completion to second order in eps.
    """
    Bv = solve_triangular(L, V, lower=True, trans="T")
    Bc = Bv if C is V else solve_triangular(L, C, lower=True, trans="T")
    return eps * (Bv.T @ Bc)


@dataclass(frozen=True, eq=False)
class NystromGram:
    """G_hat = G_NK G_KK^{-1} G_KN, stored through the factor C = L^{-1} G_KN."""

    rows_block: np.ndarray
    anchor_block: np.ndarray
    chol: np.ndarray
    factor: np.ndarray
    jitter: float  # relative to the mean anchor diagonal

    @property
    def anchors(self) -> int:
        return self.anchor_block.shape[0]

    @property
    def jitter_abs(self) -> float:
        return self.jitter * float(np.trace(self.anchor_block)) / self.anchors

    @cached_property
    def approx(self) -> np.ndarray:
        g = self.factor.T @ self.factor
        if self.jitter > 0:
            g = g + _jitter_correction(self.chol, self.factor, self.factor, self.jitter_abs)
        return 0.5 * (g + g.T)


def nystrom_complete(g_kk, g_kn) -> NystromGram:
    g_kk = np.asarray(g_kk, dtype=float)
    g_kn = np.asarray(g_kn, dtype=float)
    k = g_kk.shape[0]
    if g_kk.shape != (k, k) or g_kn.shape[0] != k or g_kn.shape[1] < k:
        raise DimensionMismatch(f"anchor block {g_kk.shape} incompatible with rows block {g_kn.shape}")
    L, rel = _anchor_cholesky(0.5 * (g_kk + g_kk.T))
    C = solve_triangular(L, g_kn, lower=True)
    return NystromGram(rows_block=g_kn, anchor_block=g_kk, chol=L, factor=C, jitter=rel)


def nystrom_gram_fn(anchors: np.ndarray, inputs: np.ndarray):
    """Gram builder for a model whose first K training inputs are the anchors."""

    def build(kernel: KernelSpec) -> np.ndarray:
        g_kn = gram_matrix(kernel, anchors, inputs)
        return nystrom_complete(g_kn[:, : anchors.shape[0]], g_kn).approx

    return build


def nystrom_cross_fn(anchors: np.ndarray, inputs: np.ndarray):
    """Test covariances k(x*, X_K) G_KK^{-1} G_KN consistent with the Nystrom gram.

    Using the exact k(x*, X) instead would pair a full-rank cross covariance
    with a low-rank training gram and amplify the residual part of the weights.
    """

    def cross(kernel: KernelSpec, xs: np.ndarray) -> np.ndarray:
        g_kn = gram_matrix(kernel, anchors, inputs)
        g_kk = 0.5 * (g_kn[:, : anchors.shape[0]] + g_kn[:, : anchors.shape[0]].T)
        L, rel = _anchor_cholesky(g_kk)
        C = solve_triangular(L, g_kn, lower=True)
        V = solve_triangular(L, gram_matrix(kernel, anchors, xs), lower=True)
        cross = V.T @ C
        if rel > 0:
            cross += _jitter_correction(L, V, C, rel * float(np.trace(g_kk)) / anchors.shape[0])
        return cross

    return cross


def nystrom_objective_fn(anchors: np.ndarray, inputs: np.ndarray, targets: np.ndarray):
    """Log marginal likelihood (and log-parameter gradient) of a Nystrom-gram GP.

    Uses the Woodbury identity, so each evaluation costs O(K^2 N) rather than O(N^3).
    """
    anchors = np.asarray(anchors, dtype=float)
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    K, N = anchors.shape[0], X.shape[0]

    def objective(kernel: KernelSpec, s2: float):
        g_kn = gram_matrix(kernel, anchors, X)
        g_kk = 0.5 * (g_kn[:, :K] + g_kn[:, :K].T)
        L, rel = _anchor_cholesky(g_kk)
        eps_scale = rel / K
        C = solve_triangular(L, g_kn, lower=True)
        B = solve_triangular(L, C, lower=True, trans="T")  # M^{-1} G_KN
        P = s2 * np.eye(K) + C @ C.T
        Lp = cholesky(P, lower=True)
        Cy = C @ y
        alpha = (y - C.T @ cho_solve((Lp, True), Cy)) / s2
        logdet = (N - K) * math.log(s2) + 2.0 * float(np.sum(np.log(np.diag(Lp))))
        value = -0.5 * float(y @ alpha) - 0.5 * logdet - 0.5 * N * math.log(2 * math.pi)

        # B Sigma^{-1} = (B - (B C^T) P^{-1} C) / s2
        BS = (B - (B @ C.T) @ cho_solve((Lp, True), C)) / s2
        BSB = BS @ B.T
        Ba = B @ alpha
        grads = []
        for dkn in kernel.param_gradients(anchors, X, g_kn):
            dkk = 0.5 * (dkn[:, :K] + dkn[:, :K].T)
            dM = dkk + eps_scale * float(np.trace(dkk)) * np.eye(K)
            quad = 2.0 * float(Ba @ (dkn @ alpha)) - float(Ba @ dM @ Ba)
            tr = 2.0 * float(np.sum(BS * dkn)) - float(np.sum(BSB * dM))
            grads.append(0.5 * (quad - tr))
        trace_inv = (N - float(np.sum(C * cho_solve((Lp, True), C)))) / s2
        grads.append(0.5 * s2 * (float(alpha @ alpha) - trace_inv))
        return value, np.array(grads)

    return objective


# --- predictive distributions and fusion ------------------------------------


@dataclass(frozen=True)
class PredictiveDist:
    """Gaussian predictive N(mean, cov).

    ``cov`` is a matrix for a joint vector prediction, or a 1-D array of
    variances when each entry of ``mean`` is an independent scalar prediction.
    """

    mean: np.ndarray
    cov: np.ndarray
    fallbacks: int = 0

    @property
    def variance(self) -> np.ndarray:
        c = np.asarray(self.cov)
        return c if c.ndim == 1 else np.diag(c)


def fuse_predictions(dists: list[PredictiveDist]) -> PredictiveDist:
    """Minimizer of sum_i KL(N(mu_i, S_i) || N(mu, S)).

    mu* = mean of mu_i;  S* = (1/m) sum_i [S_i + (mu* - mu_i)(mu* - mu_i)^T].
    """
    if not dists:
        raise ValueError("nothing to fuse")
    means = [np.atleast_1d(np.asarray(p.mean, dtype=float)) for p in dists]
    covs = [np.asarray(p.cov, dtype=float) for p in dists]
    shape_m, shape_c = means[0].shape, covs[0].shape
    if any(m.shape != shape_m for m in means) or any(c.shape != shape_c for c in covs):
        raise DimensionMismatch("predictive distributions differ in dimension")
    mu = np.mean(means, axis=0)
    if covs[0].ndim == 1:
        if shape_c != shape_m:
            raise DimensionMismatch("variance vector does not match mean")
        cov = np.mean([c + (mu - m) ** 2 for m, c in zip(means, covs)], axis=0)
    else:
        if shape_c != (shape_m[0], shape_m[0]):
            raise DimensionMismatch("covariance does not match mean")
        cov = np.mean([c + np.outer(mu - m, mu - m) for m, c in zip(means, covs)], axis=0)
        cov = 0.5 * (cov + cov.T)
    return PredictiveDist(mean=mu, cov=cov)


def kl_gaussian(mu0, cov0, mu1, cov1) -> float:
    """KL(N(mu0, cov0) || N(mu1, cov1)) for full covariance matrices."""
    mu0, mu1 = np.atleast_1d(mu0), np.atleast_1d(mu1)
    cov0, cov1 = np.atleast_2d(cov0), np.atleast_2d(cov1)
    k = mu0.shape[0]
    L1 = cholesky(cov1, lower=True)
    diff = mu1 - mu0
    tr = float(np.trace(cho_solve((L1, True), cov0)))
    quad = float(diff @ cho_solve((L1, True), diff))
    _, logdet0 = np.linalg.slogdet(cov0)
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(L1))))
    return 0.5 * (tr + quad - k + logdet1 - logdet0)


def _local_latent(local_models: list[GpModel], x_star):
    posts = [predict(m, np.atleast_2d(x_star)) for m in local_models]
    mu = np.array([p.mean for p in posts])
    var = np.array([p.variance for p in posts])
    prior = local_models[0].kernel.diag(np.atleast_2d(x_star))
    floor = 1e-12 * np.maximum(prior, 1e-300)
    return mu, np.maximum(var, floor), prior


def poe_combine(mu, var) -> tuple[np.ndarray, np.ndarray]:
    """Product of experts over axis 0.

    precision = sum_i 1/var_i;  mean = (sum_i mu_i/var_i) / precision.
    """
    mu, var = np.atleast_2d(mu), np.atleast_2d(var)
    prec = np.sum(1.0 / var, axis=0)
    return np.sum(mu / var, axis=0) / prec, 1.0 / prec


def bcm_combine(mu, var, prior_var) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bayesian committee machine: the product of experts with the prior counted once.

    precision = sum_i 1/var_i - (m - 1)/k(x*, x*);  mean = (sum_i mu_i/var_i) / precision.
    Entries whose precision is not positive fall back to the PoE value; the
    returned mask marks them.
    """
    mu, var = np.atleast_2d(mu), np.atleast_2d(var)
    m = mu.shape[0]
    raw = np.sum(1.0 / var, axis=0)
    prec = raw - (m - 1) / np.asarray(prior_var, dtype=float)
    bad = ~(prec > 0)
    prec = np.where(bad, raw, prec)
    return np.sum(mu / var, axis=0) / prec, 1.0 / prec, bad


def predict_poe(local_models: list[GpModel], x_star) -> PredictiveDist:
    """PoE of the local latent posteriors; the noise variance is added for y*."""
    mu, var, _ = _local_latent(local_models, x_star)
    mean, v = poe_combine(mu, var)
    return PredictiveDist(mean=mean, cov=v + local_models[0].noise_variance)


def predict_bcm(local_models: list[GpModel], x_star) -> PredictiveDist:
    """BCM of the local latent posteriors, with PoE fallback counted in ``fallbacks``."""
    mu, var, prior = _local_latent(local_models, x_star)
    mean, v, bad = bcm_combine(mu, var, prior)
    return PredictiveDist(mean=mean, cov=v + local_models[0].noise_variance,
                          fallbacks=int(np.count_nonzero(bad)))


def check_precision(dist: PredictiveDist, strict: bool = False) -> PredictiveDist:
    if strict and dist.fallbacks:
        raise DegeneratePrecision(f"{dist.fallbacks} queries had nonpositive BCM precision")
    return dist


# --- codecs over the wire ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transmission:
    """What a receiver reconstructs from one machine's input batch."""

    decoded: np.ndarray
    header_bits: int
    payload_bits: int
    wire: bytes


def transmit_inputs(x: np.ndarray, sender_cov: SpdMatrix, metric: SpdMatrix, codec: str,
                    rate: int) -> Transmission:
    """Encode ``x`` for a receiver whose inputs have second moment ``metric``,
    serialize, and decode from the bytes alone (plus shared covariances)."""
    n, d = x.shape
    if codec == "persym":
        enc = persym.encode(x, sender_cov, metric, rate)
        wire = enc.to_bytes()
        received = persym.decode_bytes(wire, enc.transform)
        return Transmission(persym.decode(received), enc.header_bits, enc.payload_bits, wire)
    if codec == "dimred":
        m = min(int(rate) // dimred.COEFF_BITS, d)
        if m == 0:
            enc = dimred.EncodedCoefficients(np.zeros((d, 0)), np.zeros(0), np.zeros((n, 0), np.int16))
        else:
            model = dimred.fit(sender_cov, metric, m)
            enc = dimred.quantize_coefficients(model, dimred.encode_dr(model, x))
        wire = enc.to_bytes()
        received = dimred.EncodedCoefficients.from_bytes(wire)
        return Transmission(dimred.dequantize_coefficients(received), enc.header_bits, enc.payload_bits, wire)
    if codec == "lossless":
        wire = np.asarray(x, dtype=">f8").tobytes()
        decoded = np.frombuffer(wire, dtype=">f8").reshape(n, d).astype(float)
        return Transmission(decoded, 0, FLOAT_BITS * n * d, wire)
    raise ValueError(f"unknown codec {codec!r}")


def _log_transmission(ledger: BitLedger, sender: int, receiver, tx: Transmission) -> None:
    if tx.header_bits:
        ledger.record(sender, receiver, "header", tx.header_bits)
    ledger.record(sender, receiver, "encoded_batch", tx.payload_bits)


def default_hyperparameters(kind: str, X, y) -> tuple[KernelSpec, float]:
    """Data-scaled starting point shared by every protocol."""
    X = np.asarray(X, dtype=float)
    vy = float(np.var(y)) or 1.0
    d = X.shape[1]
    if kind == LINEAR:
        return KernelSpec(LINEAR, a=vy / d, b=0.01 * vy), 0.1 * vy
    return KernelSpec("se", sigma_s=vy, lengthscale=math.sqrt(d)), 0.1 * vy


def _kernel_template(kernel: KernelSpec | str, X, y) -> tuple[KernelSpec, float | None]:
    if isinstance(kernel, str):
        return default_hyperparameters(kernel, X, y)
    return kernel, None


def build_receiver_model(own: Machine, others: list[np.ndarray], other_targets: list[np.ndarray],
                         kernel: KernelSpec, noise: float, lossless: bool) -> GpModel:
    """GP at one receiving machine: own rows are the Nystrom anchors."""
    X = np.vstack([own.local_inputs, *others])
    y = np.concatenate([own.local_targets, *other_targets])
    if lossless:
        return assemble(kernel, noise, X, y)
    return assemble(
        kernel, noise, X, y,
        gram_fn=nystrom_gram_fn(own.local_inputs, X),
        objective_fn=nystrom_objective_fn(own.local_inputs, X, y),
        cross_fn=nystrom_cross_fn(own.local_inputs, X),
    )


def _pooled(machines):
    X = np.vstack([m.local_inputs for m in machines])
    y = np.concatenate([m.local_targets for m in machines])
    return X, y


def _initial(kernel, noise_variance, machines):
    X, y = _pooled(machines)
    template, noise0 = _kernel_template(kernel, X, y)
    if noise_variance is not None:
        noise0 = noise_variance
    if noise0 is None:
        noise0 = 0.1 * (float(np.var(y)) or 1.0)
    return template, noise0


def run_single_center(machines: list[Machine], codec: str, rate: int, kernel: KernelSpec | str,
                      noise_variance: float | None = None, fit: bool = True, max_iters: int = 200,
                      tol: float = 1e-5) -> tuple[GpModel, BitLedger]:
    """Machine 0 collects encoded inputs from all others and learns the GP."""
    if len(machines) < 2:
        raise ValueError("single-center learning needs at least two machines")
    if codec not in CODECS:
        raise ValueError(f"unknown codec {codec!r}")
    ledger = BitLedger()
    center = machines[0]
    d = center.dim
    ledger.record(center.id, BROADCAST, "covariance", covariance_bits(d))
    decoded, targets = [], []
    for mach in machines[1:]:
        if codec == "persym":
            # the decoder needs the sender's covariance to rebuild the transform
            ledger.record(mach.id, center.id, "covariance", covariance_bits(d))
        tx = transmit_inputs(mach.local_inputs, mach.local_cov, center.local_cov, codec, rate)
        _log_transmission(ledger, mach.id, center.id, tx)
        ledger.record(mach.id, center.id, "targets", FLOAT_BITS * mach.n)
        decoded.append(tx.decoded)
        targets.append(mach.local_targets)
    template, noise0 = _initial(kernel, noise_variance, machines)
    model = build_receiver_model(center, decoded, targets, template, noise0, codec == "lossless")
    if fit:
        model = fit_hyperparameters(model, max_iters=max_iters, tol=tol)
    return model, ledger


def run_broadcast(machines: list[Machine], codec: str, rate: int, kernel: KernelSpec | str,
                  noise_variance: float | None = None, fit: bool = True, max_iters: int = 200,
                  tol: float = 1e-5) -> tuple[list[GpModel], BitLedger]:
    """Every machine broadcasts its encoded inputs once and learns its own GP."""
    if len(machines) < 2:
        raise ValueError("broadcast learning needs at least two machines")
    if codec not in CODECS:
        raise ValueError(f"unknown codec {codec!r}")
    ledger = BitLedger()
    d = machines[0].dim
    for mach in machines:
        ledger.record(mach.id, BROADCAST, "covariance", covariance_bits(d))
    total_cov = sum(m.local_cov.entries for m in machines)
    received = []
    for mach in machines:
        metric = SpdMatrix(total_cov - mach.local_cov.entries)
        tx = transmit_inputs(mach.local_inputs, mach.local_cov, metric, codec, rate)
        _log_transmission(ledger, mach.id, BROADCAST, tx)
        ledger.record(mach.id, BROADCAST, "targets", FLOAT_BITS * mach.n)
        received.append(tx.decoded)
    template, noise0 = _initial(kernel, noise_variance, machines)
    models = []
    for i, mach in enumerate(machines):
        others = [received[j] for j in range(len(machines)) if j != i]
        other_y = [machines[j].local_targets for j in range(len(machines)) if j != i]
        model = build_receiver_model(mach, others, other_y, template, noise0, codec == "lossless")
        if fit:
            model = fit_hyperparameters(model, max_iters=max_iters, tol=tol)
        models.append(model)
    return models, ledger


def predict_broadcast(models: list[GpModel], x_star, ledger: BitLedger | None = None,
                      fusion_center: int = 0) -> PredictiveDist:
    """Fuse the machines' predictive distributions at ``fusion_center``."""
    xs = np.atleast_2d(x_star)
    dists = []
    for i, m in enumerate(models):
        post = predict(m, xs)
        dists.append(PredictiveDist(mean=post.mean, cov=post.predictive_variance))
        if ledger is not None and i != fusion_center:
            ledger.record(i, fusion_center, "predictive", 2 * FLOAT_BITS * xs.shape[0])
    return fuse_predictions(dists)


def run_full(machines: list[Machine], kernel: KernelSpec | str, noise_variance: float | None = None,
             fit: bool = True, max_iters: int = 200, tol: float = 1e-5) -> tuple[GpModel, BitLedger]:
    """Reference: all raw data gathered at machine 0 and an exact GP learned there."""
    ledger = BitLedger()
    for mach in machines[1:]:
        ledger.record(mach.id, machines[0].id, "encoded_batch", FLOAT_BITS * mach.n * mach.dim)
        ledger.record(mach.id, machines[0].id, "targets", FLOAT_BITS * mach.n)
    X, y = _pooled(machines)
    template, noise0 = _initial(kernel, noise_variance, machines)
    model = assemble(template, noise0, X, y)
    if fit:
        model = fit_hyperparameters(model, max_iters=max_iters, tol=tol)
    return model, ledger


def train_local_experts(machines: list[Machine], kernel: KernelSpec | str,
                        noise_variance: float | None = None, fit: bool = True,
                        max_iters: int = 200, tol: float = 1e-5) -> list[GpModel]:
    """Zero-communication experts sharing hyperparameters.

    The marginal likelihood is taken to factorize over machines (block-diagonal
    gram), so the shared hyperparameters maximize the sum of local likelihoods.
    """
    template, noise0 = _initial(kernel, noise_variance, machines)
    theta0 = np.r_[template.log_params(), math.log(noise0)]
    if fit:
        parts = [exact_objective(m.local_inputs, m.local_targets, template) for m in machines]

        def total(theta):
            vals = [f(theta) for f in parts]
            return sum(v for v, _ in vals), sum(g for _, g in vals)

        theta, _, _ = gradient_ascent(total, theta0, max_iters, tol)
    else:
        theta = theta0
    k = len(template.param_names)
    kern = template.with_log_params(theta[:k])
    noise = math.exp(theta[k])
    return [assemble(kern, noise, m.local_inputs, m.local_targets) for m in machines]
