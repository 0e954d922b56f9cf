"""Federated deep subspace clustering simulator."""

from .harness import ExperimentConfig, RunResult, run_experiment, sweep
from .metrics import MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "MetricsReport",
    "RunResult",
    "evaluate",
    "run_experiment",
    "sweep",
    "__version__",
]
