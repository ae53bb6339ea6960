"""Experiment drivers producing CSV tables and JSON run reports."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dimred, distgp, persym, rdbound
from ..errors import ConfigError
from ..gp import assemble, fit_hyperparameters, predict, smse
from ..numerics import second_moment
from .datasets import gen_gaussian, gp1d_dataset, load_csv, synthetic_regression, write_csv

SCHEMA_VERSION = 1
EXPERIMENTS = ("rd_curve", "dimred_compare", "gp1d", "gp_rate_sweep")
DATASETS = ("synthetic_gaussian", "synthetic_regression", "csv_path")
PROTOCOLS = ("single_center", "broadcast", "poe", "bcm", "full")

_DEFAULT_RATES = {
    "rd_curve": [0, 8, 16, 32, 48, 64, 80, 100, 120, 160],
    "dimred_compare": [1, 2, 4, 6, 8, 10],
    "gp1d": [1, 2, 4, 6, 8],
    "gp_rate_sweep": [0, 8, 16, 32, 64],
}
# (d, n) per experiment when the config leaves them out
_DEFAULT_SIZES = {
    "rd_curve": (20, 2000),
    "dimred_compare": (10, 2000),
    "gp1d": (1, 200),
    "gp_rate_sweep": (8, 1000),
}


@dataclass
class ExperimentConfig:
    experiment: str
    schema: int = SCHEMA_VERSION
    dataset: str = "synthetic_gaussian"
    csv_path: str | None = None
    target_column: str | None = None
    test_fraction: float = 0.2
    d: int | None = None
    n: int | None = None
    n_test: int = 500
    machine_count: int = 10
    seed: int = 0
    rate_grid: list[int] = field(default_factory=list)
    kernel: str = "se"
    codec: str = "persym"
    protocols: list[str] = field(default_factory=lambda: list(PROTOCOLS))
    same_distribution: bool = False
    max_iters: int = 200
    tol: float = 1e-5

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {self.schema!r}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "csv_path" and not (self.csv_path and self.target_column):
            raise ConfigError("csv_path datasets need csv_path and target_column")
        if not self.rate_grid:
            self.rate_grid = list(_DEFAULT_RATES[self.experiment])
        d0, n0 = _DEFAULT_SIZES[self.experiment]
        self.d = d0 if self.d is None else self.d
        self.n = n0 if self.n is None else self.n
        r = self.rate_grid
        if any(not isinstance(v, int) or isinstance(v, bool) or v < 0 for v in r):
            raise ConfigError("rate_grid entries must be nonnegative integers")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ConfigError("rate_grid must be strictly increasing")
        for name in ("d", "n", "machine_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.kernel not in ("se", "linear"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.codec not in distgp.CODECS:
            raise ConfigError(f"unknown codec {self.codec!r}")
        bad = [p for p in self.protocols if p not in PROTOCOLS]
        if bad or not self.protocols:
            raise ConfigError(f"unknown protocols {bad!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ExperimentResult:
    header: list[str]
    rows: list[list]
    report: dict

    def write(self, out_dir, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
        write_csv(csv_path, self.header, self.rows)
        json_path.write_text(json.dumps(self.report, indent=2, default=_jsonable) + "\n")
        return csv_path, json_path

    def column(self, name: str) -> np.ndarray:
        j = self.header.index(name)
        return np.array([r[j] for r in self.rows])


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- rate-distortion curve ---------------------------------------------------


def rd_curve(cfg: ExperimentConfig) -> ExperimentResult:
    """Lower bound, per-symbol and 16-bit dimension-reduction distortion versus rate.

    Sender and receiver share one random covariance, used as both Qx and Qy;
    the empirical column quantizes a batch drawn from it.
    """
    x, cov = gen_gaussian(cfg.d, cfg.n, cfg.seed)
    qx = qy = cov
    spec = rdbound.product_spectrum(qx, qy)
    eigs = spec.eigenvalues
    rows = []
    for rate in cfg.rate_grid:
        bound = rdbound.distortion_at_rate(spec, rate)
        alloc = persym.allocate_bits(eigs, rate)
        enc = persym.encode(x, qx, qy, rate, spectrum=spec)
        empirical = persym.measure_distortion(x, persym.decode(enc), qy)
        m = min(rate // dimred.COEFF_BITS, cfg.d)
        dr = float(np.sum(eigs[m:]))
        rows.append([rate, bound, alloc.predicted_distortion, dr, empirical])
    header = ["bits_per_sample", "lower_bound_distortion", "persym_distortion",
              "dimred_distortion", "persym_empirical_distortion"]
    return ExperimentResult(header, rows, {"config": cfg.as_dict(), "eigenvalues": eigs})


# --- dimension reduction versus PCA ------------------------------------------


def _projection_distortion(x: np.ndarray, model: dimred.DimRedModel, sy) -> float:
    recon = dimred.decode_dr(model, dimred.encode_dr(model, x))
    return persym.measure_distortion(x, recon, sy)


def dimred_compare(cfg: ExperimentConfig) -> ExperimentResult:
    """In-sample distortion of the metric-aware reduction and of PCA, per target dimension.

    The receiver's batch comes from an independent random covariance unless
    ``same_distribution`` is set.
    """
    x, cov = gen_gaussian(cfg.d, cfg.n, cfg.seed)
    if cfg.same_distribution:
        y, _ = gen_gaussian(cfg.d, cfg.n, cfg.seed + 1, cov_mode="given", cov=cov)
    else:
        y, _ = gen_gaussian(cfg.d, cfg.n, cfg.seed + 1)
    sx, sy = second_moment(x), second_moment(y)
    rows = []
    for m in cfg.rate_grid:
        if not 1 <= m <= cfg.d:
            raise ConfigError(f"target dimension {m} outside [1, {cfg.d}]")
        prop = _projection_distortion(x, dimred.fit(sx, sy, m), sy)
        pca = _projection_distortion(x, dimred.fit_pca(sx, m), sy)
        rows.append([m, prop, pca])
    return ExperimentResult(["m", "proposed_distortion", "pca_distortion"], rows,
                            {"config": cfg.as_dict()})


# --- one-dimensional quantized GP --------------------------------------------

GP1D_GRID = 201


def gp1d(cfg: ExperimentConfig) -> ExperimentResult:
    """Exact GP versus a GP trained on per-symbol quantized inputs at each rate.

    The quantized GP refits its hyperparameters, starting from the exact GP's.
    """
    data = gp1d_dataset(cfg.seed, n=cfg.n)
    x, y = data.inputs, data.targets
    kern0, noise0 = distgp.default_hyperparameters("se", x, y)
    true = fit_hyperparameters(assemble(kern0, noise0, x, y), cfg.max_iters, cfg.tol)
    grid = np.linspace(-10.0, 10.0, GP1D_GRID)[:, None]
    tp = predict(true, grid)
    t_std = np.sqrt(tp.predictive_variance)
    q = second_moment(x)
    rows = []
    per_rate = {}
    for rate in cfg.rate_grid:
        enc = persym.encode(x, q, q, rate)
        xq = persym.decode(enc)
        qmodel = fit_hyperparameters(assemble(true.kernel, true.noise_variance, xq, y),
                                     cfg.max_iters, cfg.tol)
        qp = predict(qmodel, grid)
        q_std = np.sqrt(qp.predictive_variance)
        per_rate[rate] = {"bits": enc.ledger_bits,
                          "hyperparameters": {**qmodel.kernel.as_dict(),
                                              "noise_variance": qmodel.noise_variance}}
        for g, tm, ts, qm, qs in zip(grid[:, 0], tp.mean, t_std, qp.mean, q_std):
            rows.append([rate, float(g), float(tm), float(ts), float(qm), float(qs)])
    report = {
        "config": cfg.as_dict(),
        "hyperparameters": {**true.kernel.as_dict(), "noise_variance": true.noise_variance},
        "data_range": [float(x.min()), float(x.max())],
        "per_rate": per_rate,
    }
    header = ["rate", "x", "true_mean", "true_std", "quantized_mean", "quantized_std"]
    return ExperimentResult(header, rows, report)


# --- SMSE versus rate --------------------------------------------------------


def load_regression(cfg: ExperimentConfig):
    if cfg.dataset == "csv_path":
        return load_csv(cfg.csv_path, cfg.target_column, cfg.test_fraction, cfg.seed)
    return synthetic_regression(cfg.d, cfg.n, cfg.n_test, cfg.seed)


def _hyper(model) -> dict:
    return {**model.kernel.as_dict(), "noise_variance": model.noise_variance}


def rate_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """SMSE and total transmitted bits for each (rate, protocol) cell."""
    data = load_regression(cfg)
    machines = distgp.split_dataset(data.train_inputs, data.train_targets, cfg.machine_count, cfg.seed)
    xt, yt = data.test_inputs, data.test_targets
    fit_kw = {"max_iters": cfg.max_iters, "tol": cfg.tol}
    runs: dict = {}

    def zero_rate(protocol: str) -> dict:
        # PoE/BCM/full do not depend on the rate; compute once and reuse
        if ("*", protocol) in runs:
            return runs[("*", protocol)]
        ledger = distgp.BitLedger()
        if protocol == "full":
            model, ledger = distgp.run_full(machines, cfg.kernel, **fit_kw)
            pred, hyper = predict(model, xt).mean, [_hyper(model)]
        else:
            if "experts" not in runs:
                runs["experts"] = distgp.train_local_experts(machines, cfg.kernel, **fit_kw)
            experts = runs["experts"]
            combine = distgp.predict_poe if protocol == "poe" else distgp.predict_bcm
            dist = combine(experts, xt)
            for i in range(1, len(experts)):
                ledger.record(i, 0, "predictive", 2 * distgp.FLOAT_BITS * xt.shape[0])
            pred, hyper = dist.mean, [_hyper(experts[0])]
        runs[("*", protocol)] = {"pred": pred, "ledger": ledger, "hyper": hyper}
        return runs[("*", protocol)]

    rows, cells = [], []
    for rate in cfg.rate_grid:
        for protocol in cfg.protocols:
            start = time.perf_counter()
            if protocol == "single_center":
                model, ledger = distgp.run_single_center(machines, cfg.codec, rate, cfg.kernel, **fit_kw)
                pred, hyper = predict(model, xt).mean, [_hyper(model)]
            elif protocol == "broadcast":
                models, ledger = distgp.run_broadcast(machines, cfg.codec, rate, cfg.kernel, **fit_kw)
                pred = distgp.predict_broadcast(models, xt, ledger).mean
                hyper = [_hyper(m) for m in models]
            else:
                run = zero_rate(protocol)
                pred, ledger, hyper = run["pred"], run["ledger"], run["hyper"]
            score = smse(yt, pred)
            rows.append([rate, protocol, score, ledger.total])
            cells.append({
                "rate": rate, "protocol": protocol, "smse": score, "total_bits": ledger.total,
                "hyperparameters": hyper, "ledger": ledger.as_list(),
                "wall_time": time.perf_counter() - start,
            })
    report = {"config": cfg.as_dict(), "runs": cells}
    return ExperimentResult(["rate", "protocol", "smse", "total_bits"], rows, report)


RUNNERS = {
    "rd_curve": rd_curve,
    "dimred_compare": dimred_compare,
    "gp1d": gp1d,
    "gp_rate_sweep": rate_sweep,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    start = time.perf_counter()
    result = RUNNERS[cfg.experiment](cfg)
    result.report["wall_time"] = time.perf_counter() - start
    return result
