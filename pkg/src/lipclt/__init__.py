"""Numerical checks of Gaussian limit laws for random Lipschitz iterations.

Modules: :mod:`core` (maps, laws, observables), :mod:`models` (concrete
families and presets), :mod:`diagnostics` (moment and contraction
conditions), :mod:`simulate` (Monte Carlo paths), :mod:`variance`
(asymptotic variance), :mod:`spectral` (Fourier operators on a grid) and
:mod:`harness` (CLT checks, pipeline and CLI).
"""

from .core import MapDistribution, SystemModel, apply, atom, map_sample, xi_eval
from .errors import (
    AmbiguousDominanceError,
    ConfigError,
    HypothesisFailure,
    LipCLTError,
    NumericalError,
    UnsupportedModelError,
)
from .pipeline import run_experiment

__version__ = "0.1.0"

__all__ = [
    "AmbiguousDominanceError",
    "ConfigError",
    "HypothesisFailure",
    "LipCLTError",
    "MapDistribution",
    "NumericalError",
    "SystemModel",
    "UnsupportedModelError",
    "apply",
    "atom",
    "map_sample",
    "run_experiment",
    "xi_eval",
]
