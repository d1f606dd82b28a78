"""Visual robustness evaluation for VQA: image corruptions and robustness metrics."""
from .corruptions import BENCHMARK_CORRUPTIONS, REGISTRY, CorruptionSpec, apply, corrupt, resolve
from .metrics import EvaluationGrid, benchmark_grid, build_grid, compute_report, softmax_weights
from .severity import SeverityTable

__all__ = [
    "BENCHMARK_CORRUPTIONS",
    "REGISTRY",
    "CorruptionSpec",
    "EvaluationGrid",
    "SeverityTable",
    "apply",
    "benchmark_grid",
    "build_grid",
    "compute_report",
    "corrupt",
    "resolve",
    "softmax_weights",
]

__version__ = "0.1.0"
