"""Bayesian clustering of categorical data with a mixture of finite mixtures of
latent class models, fitted by the telescoping sampler."""

from .data import (CategoricalDataset, SimulationSpec, benchmark_design, generate_dataset,
                   load_csv)
from .distributions import BnbParams
from .model import Hyperparameters, MCMCState
from .pipeline import ExperimentConfig, fit_dataset
from .postprocess import adjusted_rand_index, identify, misclassification_rate
from .sampler import TraceStore, run_chain

__all__ = ["BnbParams", "CategoricalDataset", "ExperimentConfig", "Hyperparameters", "MCMCState",
           "SimulationSpec", "TraceStore", "adjusted_rand_index", "benchmark_design",
           "fit_dataset", "generate_dataset", "identify", "load_csv", "misclassification_rate",
           "run_chain"]
__version__ = "0.1.0"
