"""Gaussian-process regression with linear and squared-exponential kernels.

Hyperparameters live in log-space for optimization.  The parameter vector
used by the objective functions is ``kernel.log_params()`` followed by the
log noise variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve, cholesky, lapack

from .errors import DegenerateTargets, DimensionMismatch, NonFinite, SingularSystem

LINEAR = "linear"
SQUARED_EXPONENTIAL = "se"
_PARAMS = {LINEAR: ("a", "b"), SQUARED_EXPONENTIAL: ("sigma_s", "lengthscale")}
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    """Linear ``a x^T x' + b`` or squared exponential ``sigma_s exp(-|x - x'|^2 / l^2)``."""

    kind: str = SQUARED_EXPONENTIAL
    a: float = 1.0
    b: float = 1.0
    sigma_s: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        for name in self.param_names:
            # the linear offset b may be exactly zero (it is then held fixed when fitting)
            lowest_ok = getattr(self, name) >= 0 if name == "b" else getattr(self, name) > 0
            if not lowest_ok:
                raise ValueError(f"kernel parameter {name} must be positive")

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAMS[self.kind]

    def log_params(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log([getattr(self, n) for n in self.param_names])

    def with_log_params(self, theta) -> "KernelSpec":
        vals = np.exp(np.asarray(theta, dtype=float))
        return replace(self, **{n: float(v) for n, v in zip(self.param_names, vals)})

    def as_dict(self) -> dict:
        return {"kind": self.kind, **{n: getattr(self, n) for n in self.param_names}}

    def __call__(self, A, B=None) -> np.ndarray:
        return gram_matrix(self, A, B)

    def diag(self, A) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if self.kind == LINEAR:
            return self.a * np.einsum("ij,ij->i", A, A) + self.b
        return np.full(A.shape[0], self.sigma_s)

    def param_gradients(self, A, B=None, K=None) -> list[np.ndarray]:
        """d k(A, B) / d log(param) for each kernel parameter."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        same = B is None
        B = A if same else np.atleast_2d(np.asarray(B, dtype=float))
        if K is None:
            K = gram_matrix(self, A, None if same else B)
        if self.kind == LINEAR:
            return [K - self.b, np.full(K.shape, self.b)]
        sq = _sq_dist(A, B, same)
        return [K, K * (2.0 * sq / self.lengthscale**2)]


def _sq_dist(A, B, same) -> np.ndarray:
    an = np.einsum("ij,ij->i", A, A)
    bn = an if same else np.einsum("ij,ij->i", B, B)
    sq = an[:, None] + bn[None, :] - 2.0 * (A @ B.T)
    np.maximum(sq, 0.0, out=sq)
    if same:
        np.fill_diagonal(sq, 0.0)
        sq = 0.5 * (sq + sq.T)
    return sq


def gram_matrix(kernel: KernelSpec, A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    same = B is None
    B = A if same else np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"inputs have {A.shape[1]} and {B.shape[1]} columns")
    if kernel.kind == LINEAR:
        K = kernel.a * (A @ B.T) + kernel.b
        if same:
            K = 0.5 * (K + K.T)
        return K
    return kernel.sigma_s * np.exp(-_sq_dist(A, B, same) / kernel.lengthscale**2)


def cholesky_jittered(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, retrying with diagonal jitter 1e-10 then 1e-6 (x mean diag)."""
    n = K.shape[0]
    scale = max(float(np.trace(K)) / max(n, 1), np.finfo(float).tiny)
    for jitter in (0.0, 1e-10 * scale, 1e-6 * scale):
        try:
            Kj = K if jitter == 0.0 else K + jitter * np.eye(n)
            return cholesky(Kj, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            continue
    raise SingularSystem("covariance matrix is not positive definite even with jitter")


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    variance: np.ndarray
    predictive_variance: np.ndarray


Objective = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass(frozen=True, eq=False)
class GpModel:
    """An assembled GP: hyperparameters, data and the factorized covariance.

    ``gram_fn`` rebuilds the training gram for new kernel parameters and
    ``objective_fn`` gives the log marginal likelihood with gradient, and
    ``cross_fn`` the test-versus-training covariances; all default to the exact
    kernel on ``train_inputs``.  Distributed models swap in an approximated
    gram together with matching cross covariances.
    """

    kernel: KernelSpec
    noise_variance: float
    train_inputs: np.ndarray
    train_targets: np.ndarray
    gram: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    gram_fn: Callable[[KernelSpec], np.ndarray] | None = None
    objective_fn: Callable[[KernelSpec, float], tuple[float, np.ndarray]] | None = None
    cross_fn: Callable[[KernelSpec, np.ndarray], np.ndarray] | None = None
    fit_trace: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.train_targets.shape[0]

    def params(self) -> np.ndarray:
        return np.r_[self.kernel.log_params(), math.log(self.noise_variance)]

    def predict(self, x_star) -> Posterior:
        return predict(self, x_star)


def assemble(kernel, noise_variance, train_inputs, train_targets, gram=None,
             gram_fn=None, objective_fn=None, cross_fn=None, fit_trace=()) -> GpModel:
    X = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    y = np.asarray(train_targets, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if not noise_variance > 0:
        raise ValueError("noise variance must be positive")
    if gram is None:
        gram = gram_fn(kernel) if gram_fn is not None else gram_matrix(kernel, X)
    G = np.asarray(gram, dtype=float)
    if G.shape != (y.shape[0], y.shape[0]):
        raise DimensionMismatch(f"gram has shape {G.shape} for {y.shape[0]} targets")
    L, _ = cholesky_jittered(G + noise_variance * np.eye(y.shape[0]))
    alpha = cho_solve((L, True), y)
    return GpModel(kernel=kernel, noise_variance=float(noise_variance), train_inputs=X,
                   train_targets=y, gram=G, chol=L, alpha=alpha, gram_fn=gram_fn,
                   objective_fn=objective_fn, cross_fn=cross_fn, fit_trace=tuple(fit_trace))


def predict(model: GpModel, x_star) -> Posterior:
    """Posterior mean and variance at one or more test inputs.

    The latent variance is k(x*, x*) - G_{*n} (G + s^2 I)^{-1} G_{n*}, clamped at 0.
    """
    xs = np.asarray(x_star, dtype=float)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    if xs.shape[1] != model.train_inputs.shape[1]:
        raise DimensionMismatch(f"test input has {xs.shape[1]} columns, model has {model.train_inputs.shape[1]}")
    if model.cross_fn is not None:
        Ks = model.cross_fn(model.kernel, xs)
    else:
        Ks = gram_matrix(model.kernel, xs, model.train_inputs)
    mean = Ks @ model.alpha
    v = np.linalg.solve(model.chol, Ks.T) if model.n else np.zeros((0, xs.shape[0]))
    var = np.maximum(model.kernel.diag(xs) - np.einsum("ij,ij->j", v, v), 0.0)
    post = Posterior(mean=mean, variance=var, predictive_variance=var + model.noise_variance)
    if single:
        return Posterior(*(np.asarray(a[0]) for a in (post.mean, post.variance, post.predictive_variance)))
    return post


def _inverse_from_cholesky(L: np.ndarray) -> np.ndarray:
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise SingularSystem("could not invert the factorized covariance")
    lower = np.tril(inv)
    return lower + np.tril(inv, -1).T


def lml_dense(gram: np.ndarray, dgrams: list[np.ndarray], noise_variance: float,
              y: np.ndarray) -> tuple[float, np.ndarray]:
    """Log marginal likelihood of y ~ N(0, G + s^2 I) and its log-parameter gradient.

    ``dgrams`` are dG/dtheta_k; the last gradient entry is for log s^2.
    """
    n = y.shape[0]
    K = gram + noise_variance * np.eye(n)
    L, _ = cholesky_jittered(K)
    alpha = cho_solve((L, True), y)
    value = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI
    Kinv = _inverse_from_cholesky(L)
    W = np.outer(alpha, alpha) - Kinv
    grad = [0.5 * float(np.sum(W * dG)) for dG in dgrams]
    grad.append(0.5 * noise_variance * float(np.trace(W)))
    return value, np.array(grad)


def exact_objective(X, y, kernel_template: KernelSpec) -> Objective:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    k = len(kernel_template.param_names)

    def objective(theta):
        kern = kernel_template.with_log_params(theta[:k])
        G = gram_matrix(kern, X)
        return lml_dense(G, kern.param_gradients(X, None, G), math.exp(theta[k]), y)

    return objective


def model_objective(model: GpModel) -> Objective:
    k = len(model.kernel.param_names)
    if model.objective_fn is not None:
        return lambda theta: model.objective_fn(model.kernel.with_log_params(theta[:k]), math.exp(theta[k]))
    return exact_objective(model.train_inputs, model.train_targets, model.kernel)


def log_marginal_likelihood(model: GpModel) -> tuple[float, np.ndarray]:
    """Value and gradient (w.r.t. log hyperparameters, noise last)."""
    return model_objective(model)(model.params())


def gradient_ascent(objective: Objective, theta0, max_iters: int = 200, tol: float = 1e-5,
                    armijo: float = 1e-4, max_rejections: int = 60):
    """Backtracking gradient ascent; returns (theta, value, trace of accepted values).

    The trial step is a Barzilai-Borwein estimate from the previous move and is
    halved until the Armijo condition holds.
    """

    def safe(theta):
        try:
            with np.errstate(all="ignore"):
                v, g = objective(theta)
        except (SingularSystem, np.linalg.LinAlgError, ArithmeticError, ValueError):
            return math.nan, None
        if not (math.isfinite(v) and np.all(np.isfinite(g))):
            return math.nan, None
        return v, g

    theta = np.asarray(theta0, dtype=float).copy()
    # parameters at log(0) = -inf stay fixed
    free = np.isfinite(theta)

    def safe_free(th):
        v, g = safe(th)
        return v, (None if g is None else np.where(free, g, 0.0))

    value, grad = safe_free(theta)
    if grad is None:
        raise NonFinite("objective is not finite at the initial point")
    trace = [value]
    step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    for _ in range(max_iters):
        if float(np.max(np.abs(grad))) < tol:
            break
        t = step
        gg = float(grad @ grad)
        nonfinite = 0
        for _rej in range(max_rejections):
            cand = np.where(free, theta + t * grad, theta)
            cv, cg = safe_free(cand)
            if cg is not None and cv >= value + armijo * t * gg:
                break
            nonfinite += cg is None
            t *= 0.5
        else:
            if nonfinite == max_rejections:
                raise NonFinite("objective became non-finite on every trial step")
            break  # no ascent possible at floating-point resolution
        s = np.zeros_like(theta)
        s[free] = cand[free] - theta[free]
        curv = -float(s @ (cg - grad))
        theta, value, grad = cand, cv, cg
        trace.append(value)
        step = float(s @ s) / curv if curv > 0 else 2.0 * t
        step = min(max(step, 1e-12), 1e4)
    return theta, value, trace


def fit_hyperparameters(model: GpModel, max_iters: int = 200, tol: float = 1e-5) -> GpModel:
    objective = model_objective(model)
    theta, _, trace = gradient_ascent(objective, model.params(), max_iters, tol)
    k = len(model.kernel.param_names)
    kernel = model.kernel.with_log_params(theta[:k])
    return assemble(kernel, math.exp(theta[k]), model.train_inputs, model.train_targets,
                    gram_fn=model.gram_fn, objective_fn=model.objective_fn,
                    cross_fn=model.cross_fn, fit_trace=trace)


def smse(targets, predictions) -> float:
    """Mean squared error over the population variance of the targets."""
    t = np.asarray(targets, dtype=float).ravel()
    p = np.asarray(predictions, dtype=float).ravel()
    if t.shape != p.shape:
        raise DimensionMismatch(f"{t.shape[0]} targets but {p.shape[0]} predictions")
    if t.shape[0] < 2:
        raise DegenerateTargets("need at least two targets")
    var = float(np.var(t))
    if var == 0.0:
        raise DegenerateTargets("targets have zero variance")
    return float(np.mean((t - p) ** 2) / var)
