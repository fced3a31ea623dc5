"""Cross-temporal point forecast reconciliation for hierarchical time
series: coherent (in space and time), optionally non-negative forecasts,
plus the tooling to benchmark competing reconciliation approaches."""

__version__ = "0.1.0"

from . import errors
from .approaches import ApproachSpec, apply_approach, parse_approach
from .covariance import (
    CovarianceModel,
    ResidualPanel,
    cov_block_diagonal,
    cov_identity,
    cov_kron,
    cov_sample,
    cov_series_variance,
    cov_shrunk,
    cov_structural,
    cs_covariance,
    ct_covariance,
    per_order_covariance,
    shrinkage_coefficient,
    te_covariance,
)
from .evaluate import (
    AccuracyReport,
    DiscrepancyReport,
    MCBReport,
    forecast_skill,
    frobenius_gap,
    gross_discrepancies,
    mcb_nemenyi,
    negativity_audit,
    nrmse,
)
from .experiment import (
    ExperimentConfig,
    SeriesPanel,
    ingest_base_forecasts,
    naive_base,
    pers_bu_benchmark,
    persistence_base,
    residual_panel_from_window,
    run_experiment,
    synth_pv_panel,
)
from .hierarchy import (
    CrossSectionalStructure,
    CrossTemporalStructure,
    ForecastSet,
    TemporalStructure,
    build_cross_sectional,
    build_cross_temporal,
    build_temporal,
    coherence_residuals,
    read_hierarchy_file,
    write_hierarchy_file,
)
from .reconcile import (
    IterationTrace,
    coherence_gap,
    cs_projection_matrix,
    ct_bottom_up,
    partly_bottom_up,
    reconcile_cs,
    reconcile_iterative,
    reconcile_ka,
    reconcile_oct,
    reconcile_te,
    sequential,
    sntz,
    te_projection_matrix,
)
