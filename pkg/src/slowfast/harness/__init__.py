"""Configuration, orchestration and persistence for averaging experiments."""

from .config import ExperimentConfig, load_config, parse_config_text
from .run import ResultManifest, run_experiment

__all__ = ["ExperimentConfig", "ResultManifest", "load_config", "parse_config_text", "run_experiment"]
