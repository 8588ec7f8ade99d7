"""Configuration, experiment runner, result files and the CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import run_experiment, trial_seed
from .results import ResultRow, read_results, rows_to_csv, rows_to_json, write_results

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "load_config",
    "parse_config",
    "read_results",
    "rows_to_csv",
    "rows_to_json",
    "run_experiment",
    "trial_seed",
    "write_results",
]
