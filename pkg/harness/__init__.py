# Harness package: configuration, experiment drivers, reporting and the CLI
from .acceptance import AcceptanceGate
from .config import ExperimentConfig, load_config, parse_config
from .experiments import Report

__all__ = ["AcceptanceGate", "ExperimentConfig", "Report", "load_config", "parse_config"]
