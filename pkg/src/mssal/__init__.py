"""Clustering with mixtures of multiple scaled shifted asymmetric Laplace
(MSSAL) distributions."""

from .data import ScenarioSpec, generate_scenario, pca_scores, read_csv, read_labels, write_csv
from .distributions import (
    ComponentParams,
    DataMatrix,
    MixtureModel,
    gig_moments,
    mixture_log_density,
    mssal_log_density,
    sample_mixture,
    sample_mssal,
)
from .em import FitConfig, FitError, FitResult, fit_em, map_classify
from .metrics import adjusted_rand_index, cross_tab, rand_index
from .modelfile import load_model, save_model
from .selection import SelectionReport, bic, count_free_params, select_model

__version__ = "0.1.0"

__all__ = [
    "ComponentParams",
    "DataMatrix",
    "FitConfig",
    "FitError",
    "FitResult",
    "MixtureModel",
    "ScenarioSpec",
    "SelectionReport",
    "adjusted_rand_index",
    "bic",
    "count_free_params",
    "cross_tab",
    "fit_em",
    "generate_scenario",
    "gig_moments",
    "load_model",
    "map_classify",
    "mixture_log_density",
    "mssal_log_density",
    "pca_scores",
    "rand_index",
    "read_csv",
    "read_labels",
    "sample_mixture",
    "sample_mssal",
    "save_model",
    "select_model",
    "write_csv",
]
