"""Dataset generation, CSV ingestion and normalization."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MissingColumn, ParseError
from ..gp import KernelSpec, cholesky_jittered, gram_matrix
from ..numerics import SpdMatrix


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Train/test split with inputs standardized and targets centered using train statistics."""

    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    input_mean: np.ndarray
    input_scale: np.ndarray
    target_mean: float
    columns: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]


def random_spd(d: int, rng: np.random.Generator) -> SpdMatrix:
    """A A^T + 0.1 I tr(A A^T)/d with iid standard normal A."""
    a = rng.standard_normal((d, d))
    c = a @ a.T
    return SpdMatrix(c + 0.1 * np.trace(c) / d * np.eye(d))


def gen_gaussian(d: int, n: int, seed: int, cov_mode: str = "random_spd",
                 cov=None) -> tuple[np.ndarray, SpdMatrix]:
    """n zero-mean Gaussian samples in d dimensions and their true covariance."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    rng = np.random.default_rng(seed)
    if cov_mode == "random_spd":
        cov = random_spd(d, rng)
    elif cov_mode == "given":
        if cov is None:
            raise ValueError("cov_mode 'given' needs a covariance")
        cov = cov if isinstance(cov, SpdMatrix) else SpdMatrix(np.asarray(cov, dtype=float))
    else:
        raise ValueError(f"unknown cov_mode {cov_mode!r}")
    factor = cov.eigenvectors * np.sqrt(cov.eigenvalues)
    return rng.standard_normal((n, d)) @ factor.T, cov


def normalize(inputs, targets, n_train: int | None = None, columns=()) -> DatasetBundle:
    """Standardize with statistics of the first ``n_train`` rows (all rows by default)."""
    X = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("inputs must be N x d with one target per row")
    n_train = X.shape[0] if n_train is None else int(n_train)
    if not 1 <= n_train <= X.shape[0]:
        raise ValueError("need at least one training row")
    mu = X[:n_train].mean(axis=0)
    scale = X[:n_train].std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    y_mu = float(y[:n_train].mean())
    Z = (X - mu) / scale
    # a second pass removes the rounding left by the first centering
    Z[:n_train] -= Z[:n_train].mean(axis=0)
    t = y - y_mu
    return DatasetBundle(
        train_inputs=Z[:n_train], train_targets=t[:n_train],
        test_inputs=Z[n_train:], test_targets=t[n_train:],
        input_mean=mu, input_scale=scale, target_mean=y_mu, columns=tuple(columns),
    )


def synthetic_regression(d: int = 8, n_train: int = 1000, n_test: int = 500, seed: int = 0,
                         frequency: float = 0.5, noise: float = 0.1) -> DatasetBundle:
    """Smooth nonlinear regression on correlated Gaussian inputs.

    f(x) = sin(w1.x) + 0.5 sin(w2.x) cos(w3.x) with w_k ~ N(0, frequency^2 / d I).
    """
    X, _ = gen_gaussian(d, n_train + n_test, seed)
    rng = np.random.default_rng([seed, 1])
    sd = X[:n_train].std(axis=0)
    Xs = X / np.where(sd > 0, sd, 1.0)
    W = frequency * rng.standard_normal((3, d)) / math.sqrt(d)
    f = np.sin(Xs @ W[0]) + 0.5 * np.sin(Xs @ W[1]) * np.cos(Xs @ W[2])
    y = f + noise * rng.standard_normal(n_train + n_test)
    return normalize(X, y, n_train)


@dataclass(frozen=True, eq=False)
class OneDimData:
    inputs: np.ndarray   # N x 1
    targets: np.ndarray
    latent: np.ndarray   # noiseless draw at the inputs
    kernel: KernelSpec
    noise: float


def gp1d_dataset(seed: int, n: int = 200, noise: float = 0.1, lengthscale: float = 2.0,
                 low: float = -10.0, high: float = 10.0) -> OneDimData:
    """Uniform inputs on [low, high] with targets from a seeded SE-kernel GP draw plus noise."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(low, high, n))[:, None]
    kern = KernelSpec("se", sigma_s=1.0, lengthscale=lengthscale)
    L, _ = cholesky_jittered(gram_matrix(kern, x))
    f = L @ rng.standard_normal(n)
    return OneDimData(x, f + noise * rng.standard_normal(n), f, kern, noise)


# --- CSV ------------------------------------------------------------------


def parse_csv(source: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a numeric CSV file (or CSV text if it contains a newline)."""
    if isinstance(source, Path) or "\n" not in str(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError("empty CSV file", 0, 0)
    header = [h.strip() for h in rows[0]]
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i} has {len(row)} fields, header has {len(header)}", i, len(row))
        for j, cell in enumerate(row):
            try:
                data[i - 1, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", i, j) from None
    return header, data


def load_csv(path, target_column: str, test_fraction: float = 0.0, seed: int = 0) -> DatasetBundle:
    """Load a numeric CSV, hold out a random test fraction, and normalize with train statistics."""
    header, data = parse_csv(Path(path))
    if target_column not in header:
        raise MissingColumn(target_column)
    t = header.index(target_column)
    feats = [j for j in range(len(header)) if j != t]
    X, y = data[:, feats], data[:, t]
    n_test = int(round(test_fraction * X.shape[0]))
    if n_test:
        perm = np.random.default_rng(seed).permutation(X.shape[0])
        X, y = X[perm], y[perm]
    return normalize(X, y, X.shape[0] - n_test, columns=[header[j] for j in feats])


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with CRLF line ends; floats use 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
