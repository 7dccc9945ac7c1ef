"""Staggered-adoption difference-in-differences.

Group-time ATT estimation with aggregation, multiplier-bootstrap bands,
TWFE diagnostics, an imputation cross-check and a synthetic data generator.
"""

__version__ = "0.1.0"

from .aggregation import AggregationResult, DddResult, aggregate_event, aggregate_group, aggregate_overall, contrast_ddd
from .config import BootstrapConfig, DesignConfig
from .dgp import DgpSpec, EffectModel, TrendViolation, TruthTable, generate, true_aggregates
from .diagnostics import (
    BaconDecomposition,
    TwfeResult,
    WeightReport,
    bacon_decompose,
    twfe_estimate,
    twfe_weights,
)
from .errors import *  # noqa: F401,F403
from .gt import AttGtCell, AttGtTable, att_gt_all, att_gt_conditional, att_gt_unconditional
from .imputation import FittedFe, ImputationResult, fit_untreated_twfe, impute_att, pretrend_placebos
from .inference import BandResult, attach_bands, bootstrap_bands, multiplier_bootstrap
from .panel import (
    NEVER,
    DesignSummary,
    PanelCell,
    PanelDataset,
    UnitRecord,
    aggregate_cells,
    binarize_covariates,
    load_csv,
    validate_design,
)

__all__ = [
    "NEVER",
    "AggregationResult",
    "AttGtCell",
    "AttGtTable",
    "BaconDecomposition",
    "BandResult",
    "BootstrapConfig",
    "DddResult",
    "DesignConfig",
    "DesignSummary",
    "DgpSpec",
    "EffectModel",
    "FittedFe",
    "ImputationResult",
    "PanelCell",
    "PanelDataset",
    "TrendViolation",
    "TruthTable",
    "TwfeResult",
    "UnitRecord",
    "WeightReport",
    "aggregate_cells",
    "aggregate_event",
    "aggregate_group",
    "aggregate_overall",
    "att_gt_all",
    "att_gt_conditional",
    "att_gt_unconditional",
    "attach_bands",
    "bacon_decompose",
    "binarize_covariates",
    "bootstrap_bands",
    "contrast_ddd",
    "fit_untreated_twfe",
    "generate",
    "impute_att",
    "load_csv",
    "multiplier_bootstrap",
    "pretrend_placebos",
    "true_aggregates",
    "twfe_estimate",
    "twfe_weights",
    "validate_design",
]
