"""Random forests for recurrence data from repairable systems."""

from .data import (CovariateScaler, DataError, RecurrenceDataset, Shard, SystemRecord,
                   export, ingest, shard_dataset, standardize_covariates)
from .distributed import WorkerContext, distributed_mcf, merged_node_mcf
from .forest import (ForestModel, RecurrenceForest, bootstrap_sample, c_index, fit_forest,
                     grow_tree, oob_predict, permutation_importance, predict_cum_hazard,
                     predict_intensity, predict_mcf)
from .mcf import McfEstimate, StepFunction, evaluate, local_mcf, merge_mcf
from .nhpp import IntensityModel, fit_intensity
from .simulation import SimConfig, build_dataset

__all__ = [
    "CovariateScaler", "DataError", "RecurrenceDataset", "Shard", "SystemRecord", "export",
    "ingest", "shard_dataset", "standardize_covariates", "WorkerContext",
    "distributed_mcf", "merged_node_mcf", "ForestModel", "RecurrenceForest",
    "bootstrap_sample", "c_index", "fit_forest", "grow_tree", "oob_predict",
    "permutation_importance", "predict_cum_hazard", "predict_intensity", "predict_mcf",
    "McfEstimate", "StepFunction", "evaluate", "local_mcf", "merge_mcf", "IntensityModel",
    "fit_intensity", "SimConfig", "build_dataset",
]
