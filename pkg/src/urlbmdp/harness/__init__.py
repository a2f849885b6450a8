"""Experiment harness: configuration, seeded replicates and output files."""

from .config import ExperimentConfig, expand_grid, load_config
from .output import bands, emit_csv, emit_plot_data, format_csv, parse_csv, read_csv
from .runner import LearningCurveRecord, replicate_streams, run_experiment, run_replicate

__all__ = [
    "ExperimentConfig", "expand_grid", "load_config", "bands", "emit_csv", "emit_plot_data",
    "format_csv", "parse_csv", "read_csv", "LearningCurveRecord", "replicate_streams",
    "run_experiment", "run_replicate",
]
