"""Gaussian-process learning when training inputs must be compressed before transmission.

Modules:

- ``numerics``: symmetric positive definite matrices and product spectra
- ``rdbound``: rate-distortion lower bound and its test channel
- ``persym``: per-symbol scalar quantization with greedy bit allocation
- ``dimred``: metric-aware linear dimension reduction
- ``gp``: exact GP regression and hyperparameter fitting
- ``distgp``: simulated multi-machine protocols with a bit ledger
- ``harness``: datasets, experiments and the ``commgp`` CLI
"""

__version__ = "0.1.0"

from .errors import CommGPError  # noqa: E402

__all__ = ["CommGPError", "__version__"]
