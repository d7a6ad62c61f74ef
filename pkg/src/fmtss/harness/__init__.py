"""Configuration-driven experiment harness."""

from .config import ExperimentConfig, derive_seed, load_config
from .experiments import (run_ber_sweep, run_estimator_diag, run_interference_study, run_loopback,
                          run_papr_study)

__all__ = ["ExperimentConfig", "derive_seed", "load_config", "run_ber_sweep", "run_estimator_diag",
           "run_interference_study", "run_loopback", "run_papr_study"]
