"""Mixed-frequency penalized-regression nowcasting toolkit."""

from .basis import (
    AggregatedTensor,
    LagLeadSpec,
    LegendreBasis,
    aggregate,
    basis_eval,
    umidas_expand,
    weight_curve,
)
from .factors import (
    CompletionConfig,
    FactorModelFit,
    RankSelection,
    StandardizedMatrix,
    complete_panel,
    eigenvalue_ratio_select,
    extract_panel_factors,
    growth_ratio_select,
    ingest_external_factor,
    lambda_zero,
    pca_extract,
    soft_impute,
    soft_impute_path,
    standardize,
)
from .harness import (
    EvaluationReport,
    HarnessConfig,
    Horizon,
    NowcastRecord,
    Subsample,
    cumsum_series,
    relative_rmse,
    run_expanding,
    subsample_report,
)
from .models import (
    CvPlan,
    FittedNowcastModel,
    ModelConfig,
    ModelKind,
    PanelRole,
    assemble_design,
    blocked_cv_tune,
    build_panels,
    fit_model,
    predict_one,
)
from .panel import (
    Frequency,
    HighFrequencyPanel,
    RawSeries,
    TargetSeries,
    VintageStore,
    align_to_target,
    apply_tcode,
)
from .solvers import (
    ColumnRole,
    DesignAssembly,
    PenaltySpec,
    Solution,
    SolverOptions,
    fit_proximal,
    kkt_residual,
    lava_fit,
    mu_max,
    ols_fit,
    prox_group,
    prox_l1,
    prox_sparse_group,
    ridge_fit,
)
from .synthetic import DgpConfig, RegimeShift, SyntheticPanelSpec, synthetic_dgp

__version__ = "0.1.0"
