"""Group-Sort-Fuse estimation of the order of finite mixture models."""

from .core import Dataset, MixingMeasure, PathRecord, RegularizationPath, effective_order, read_path_csv
from .errors import GSFError
from .harness import REGISTRY, RunConfig, SelectionReport, emit_report, ingest_csv, registry_lookup, run_replications
from .kernels import GaussianLocationKernel, MultinomialKernel, make_kernel
from .metrics import aggregate_selection, optimal_transport, voronoi_assign, wasserstein
from .ordering import nn_chain_ordering
from .penalties import PhiPenalty, RPenalty, Variant
from .selection import (GridSpec, Selection, default_grid, fit_path, gsf_hard, select_order_gsf,
                        select_order_gsf_hard, select_order_ic, select_order_naive)
from .solver import FitState, SolverConfig, fit_gsf, fit_pairwise, fit_plain_em

__version__ = "0.1.0"

__all__ = [
    "Dataset", "MixingMeasure", "PathRecord", "RegularizationPath", "effective_order", "read_path_csv",
    "GSFError", "REGISTRY", "RunConfig", "SelectionReport", "emit_report", "ingest_csv", "registry_lookup",
    "run_replications", "GaussianLocationKernel", "MultinomialKernel", "make_kernel", "aggregate_selection",
    "optimal_transport", "voronoi_assign", "wasserstein", "nn_chain_ordering", "PhiPenalty", "RPenalty",
    "Variant", "GridSpec", "Selection", "default_grid", "fit_path", "gsf_hard", "select_order_gsf",
    "select_order_gsf_hard", "select_order_ic", "select_order_naive", "FitState", "SolverConfig", "fit_gsf",
    "fit_pairwise", "fit_plain_em",
]
