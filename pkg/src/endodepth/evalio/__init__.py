"""Evaluation metrics, file formats and run configuration."""

from .config import SCHEMA, ConfigError, RunConfig
from .formats import (FormatError, quantize, read_pfm, read_ply, read_pnm, write_pfm, write_ply,
                      write_pnm)
from .metrics import MetricsReport, compute_metrics, evaluate, median_scale

__all__ = [
    "SCHEMA", "ConfigError", "RunConfig",
    "FormatError", "quantize", "read_pfm", "read_ply", "read_pnm", "write_pfm", "write_ply",
    "write_pnm",
    "MetricsReport", "compute_metrics", "evaluate", "median_scale",
]
