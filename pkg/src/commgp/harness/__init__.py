"""Datasets, experiment drivers and the command-line interface."""

from .datasets import (
    DatasetBundle,
    gen_gaussian,
    gp1d_dataset,
    load_csv,
    normalize,
    parse_csv,
    random_spd,
    synthetic_regression,
    write_csv,
)
from .experiments import ExperimentConfig, ExperimentResult, run_experiment

__all__ = [
    "DatasetBundle",
    "ExperimentConfig",
    "ExperimentResult",
    "gen_gaussian",
    "gp1d_dataset",
    "load_csv",
    "normalize",
    "parse_csv",
    "random_spd",
    "run_experiment",
    "synthetic_regression",
    "write_csv",
]
