"""Hysteresis operators, reference models and Extended Preisach Neural Network
identification."""

__version__ = "0.1.0"

import warnings as _warnings

# numba probes for TBB on import of parallel kernels; the default workqueue/omp
# layers are used instead, so the notice is noise.
_warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

from .epnn import Architecture, EPNNParams, forward  # noqa: E402
from .signals import TimeSeriesPair, estimate_rate, load_csv, normalize  # noqa: E402

__all__ = [
    "Architecture",
    "EPNNParams",
    "TimeSeriesPair",
    "estimate_rate",
    "forward",
    "load_csv",
    "normalize",
]
