"""Model assembly, fitting, tuning, and one-step nowcasting.

Each model kind maps the target, AR lags, MIDAS-aggregated predictor blocks,
and (optionally) PCA factor blocks into one DesignAssembly, dispatches to the
matching solver, and produces the nowcast for the origin period. Penalties are
tuned by contiguous-block cross-validation over the training span.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd

from .basis import AggregatedTensor, LagLeadSpec, LegendreBasis, aggregate, umidas_expand
from .errors import RaggedEdgeError, SpanError
from .factors import (
    CompletionConfig,
    RankSelection,
    complete_panel,
    default_kmax,
    eigenvalue_ratio_select,
    growth_ratio_select,
    pca_extract,
    standardize,
)
from .panel import HighFrequencyPanel, RawSeries, TargetSeries, align_to_target, apply_tcode
from .solvers import (
    ColumnRole,
    DesignAssembly,
    PenaltySpec,
    Solution,
    SolverOptions,
    fit_proximal,
    lava_fit,
    mu_max,
    ols_fit,
    ridge_fit,
)


class ModelKind(str, Enum):
    AR = "AR"
    SG_LASSO_MIDAS = "SG_LASSO_MIDAS"
    RIDGE_MIDAS = "RIDGE_MIDAS"
    SG_LAVA_MIDAS = "SG_LAVA_MIDAS"
    FAMIDAS = "FAMIDAS"
    SG_LASSO_FAMIDAS = "SG_LASSO_FAMIDAS"
    LASSO_UMIDAS = "LASSO_UMIDAS"
    LASSO_FAUMIDAS = "LASSO_FAUMIDAS"


PREDICTOR_KINDS = {
    ModelKind.SG_LASSO_MIDAS, ModelKind.RIDGE_MIDAS, ModelKind.SG_LAVA_MIDAS,
    ModelKind.SG_LASSO_FAMIDAS, ModelKind.LASSO_UMIDAS, ModelKind.LASSO_FAUMIDAS,
}
FACTOR_KINDS = {ModelKind.FAMIDAS, ModelKind.SG_LASSO_FAMIDAS, ModelKind.LASSO_FAUMIDAS}
UMIDAS_KINDS = {ModelKind.LASSO_UMIDAS, ModelKind.LASSO_FAUMIDAS}


@dataclass
class PanelRole:
    """How one panel enters a model."""

    panel_id: str
    include_sparse: bool = True
    include_dense: bool = False          # eligible for the lava dense part
    include_dense_factors: bool = False  # contributes a PCA factor block
    rank: int | None = None              # fixed rank override
    rank_method: str = "growth_ratio"    # or 'eigenvalue_ratio'
    kmax: int | None = None


@dataclass
class CvPlan:
    folds: int = 5

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("cross-validation needs >= 2 folds")


@dataclass
class ModelConfig:
    kind: ModelKind
    name: str = ""
    ar_lags: int = 4
    degree: int = 3
    lag_specs: dict = field(default_factory=dict)     # panel_id -> LagLeadSpec
    panel_roles: dict = field(default_factory=dict)   # panel_id -> PanelRole
    alpha: float = 0.5
    mu_grid: list | None = None
    mu_grid_size: int = 50
    mu_grid_min_ratio: float = 1e-4
    mu2_grid: list | None = None
    mu2_grid_size: int = 8
    cv: CvPlan = field(default_factory=CvPlan)
    external_factors: tuple = ()    # series keys used as observed factor blocks
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if not self.name:
            self.name = self.kind.value
        if self.ar_lags < 0:
            raise ValueError("ar_lags must be >= 0")
        if self.kind in UMIDAS_KINDS:
            self.alpha = 1.0

    def role_for(self, panel_id: str) -> PanelRole:
        return self.panel_roles.get(panel_id, PanelRole(panel_id=panel_id))


@dataclass
class FactorBlock:
    """Factor columns for one panel, with no-look-ahead statistics.

    Scores for every period are projections through loadings and
    standardization statistics computed on training periods only.
    """

    panel_id: str
    values: np.ndarray        # (R, C, T_adm) aggregated factor scores
    period_index: np.ndarray
    selection: RankSelection | None


@dataclass
class Assembled:
    """Training design plus everything needed to nowcast the origin."""

    design: DesignAssembly
    predict_row: np.ndarray | None
    origin: pd.Period
    train_periods: pd.PeriodIndex
    factor_blocks: list
    max_timestamp: pd.Timestamp | None = None


def build_panels(series_list: list[RawSeries], panel_of: dict, calendar: pd.PeriodIndex,
                 completion: CompletionConfig | None = None,
                 balance: str = "complete") -> dict:
    """Transform, align, and balance raw series into per-panel arrays.

    balance: 'complete' imputes missing interior cells by soft-impute at the
    original frequency; 'trim' leaves them missing so that aggregation only
    uses the balanced sub-span.
    """
    groups: dict[str, list[RawSeries]] = {}
    for s in series_list:
        groups.setdefault(panel_of[s.key], []).append(s)
    panels = {}
    for panel_id, members in sorted(groups.items()):
        transformed = [apply_tcode(s) for s in members]
        panel = align_to_target(transformed, calendar, panel_id=panel_id)
        if balance == "complete":
            panel = complete_panel(panel, completion)
        panels[panel_id] = panel
    return panels


def _factor_block_from_tensor(tensor: AggregatedTensor, train_positions: np.ndarray,
                              role: PanelRole) -> FactorBlock:
    """PCA factors with loadings estimated on training periods only."""
    k, c, t_adm = tensor.values.shape
    train_mask = np.isin(tensor.period_index, train_positions)
    if train_mask.sum() < 2:
        raise SpanError(f"panel {role.panel_id}: not enough training periods for factors")
    train_stack = tensor.values[:, :, train_mask].reshape(k, -1).T
    std = standardize(train_stack, series_keys=tensor.series_keys)
    rows = train_stack.shape[0]
    kmax = role.kmax or default_kmax(rows, k)
    full = pca_extract(std, rank=min(k, rows), panel_id=role.panel_id)
    if role.rank is not None:
        selection = RankSelection("fixed", max(kmax, role.rank), role.rank)
    elif role.rank_method == "eigenvalue_ratio":
        selection = eigenvalue_ratio_select(full.eigenvalues, kmax)
    else:
        selection = growth_ratio_select(full.eigenvalues, kmax)
    r = selection.selected
    loadings = full.loadings[:, :r]
    all_stack = tensor.values.reshape(k, c * t_adm).T
    scores = ((all_stack - std.column_means) / std.column_sds) @ loadings / k
    return FactorBlock(panel_id=role.panel_id, values=scores.T.reshape(r, c, t_adm),
                       period_index=tensor.period_index, selection=selection)


def _expand(panel: HighFrequencyPanel, spec: LagLeadSpec, basis: LegendreBasis,
            umidas: bool) -> AggregatedTensor:
    return umidas_expand(panel, spec) if umidas else aggregate(panel, spec, basis)


def assemble_design(config: ModelConfig, target: TargetSeries, panels: dict,
                    origin: pd.Period, calendar: pd.PeriodIndex,
                    external_series: dict | None = None,
                    with_predict_row: bool = True) -> Assembled:
    """Build the training design (t < origin) and the origin's regressor row."""
    kind = config.kind
    basis = LegendreBasis(config.degree)
    pos = {p: i for i, p in enumerate(calendar)}
    if origin not in pos:
        raise SpanError(f"origin {origin} outside the panel calendar")
    origin_pos = pos[origin]

    predictor_tensors = {}   # panel_id -> AggregatedTensor
    factor_source = {}       # panel_id -> AggregatedTensor used for PCA
    if kind in PREDICTOR_KINDS or kind in FACTOR_KINDS:
        for panel_id, panel in panels.items():
            spec = config.lag_specs.get(panel_id)
            if spec is None:
                raise SpanError(f"no lag spec configured for panel {panel_id}")
            tensor = _expand(panel, spec, basis, kind in UMIDAS_KINDS)
            if kind in PREDICTOR_KINDS and config.role_for(panel_id).include_sparse:
                predictor_tensors[panel_id] = tensor
            factor_source[panel_id] = tensor

    if kind in PREDICTOR_KINDS and not predictor_tensors:
        raise SpanError(f"model {config.name}: no predictor panel matches its lag specs")

    factor_panel_ids = []
    if kind in FACTOR_KINDS:
        flagged = [pid for pid in panels if config.role_for(pid).include_dense_factors]
        factor_panel_ids = flagged or sorted(panels)

    external_tensors = {}
    if kind in FACTOR_KINDS and config.external_factors:
        for key in config.external_factors:
            series = (external_series or {}).get(key)
            if series is None:
                raise SpanError(f"external factor series '{key}' not available")
            spec = config.lag_specs.get(f"external:{key}") or config.lag_specs.get(key)
            if spec is None:
                raise SpanError(f"no lag spec for external factor '{key}'")
            transformed = apply_tcode(series)
            ext_panel = align_to_target([transformed], calendar, panel_id=f"external:{key}")
            external_tensors[key] = _expand(ext_panel, spec, basis, kind in UMIDAS_KINDS)
        factor_panel_ids = []  # observed factors replace the PCA factors

    # Admissible periods: intersection across every block in the design.
    blocks = list(predictor_tensors.values()) + \
        [factor_source[pid] for pid in factor_panel_ids] + list(external_tensors.values())
    adm = set(range(len(calendar)))
    for tensor in blocks:
        adm &= set(tensor.period_index.tolist())

    y_map = {pos[p]: v for p, v in target.values.items() if p in pos}
    usable = []
    for t in sorted(adm):
        if t >= origin_pos or t not in y_map:
            continue
        if all(t - j in y_map for j in range(1, config.ar_lags + 1)):
            usable.append(t)
    if len(usable) < max(config.ar_lags + 2, 8):
        raise SpanError(f"only {len(usable)} usable training periods before {origin}")
    train_positions = np.array(usable, dtype=int)

    factor_blocks = []
    for pid in factor_panel_ids:
        factor_blocks.append(_factor_block_from_tensor(
            factor_source[pid], train_positions, config.role_for(pid)))
    for key, tensor in external_tensors.items():
        factor_blocks.append(FactorBlock(panel_id=f"external:{key}", values=tensor.values,
                                         period_index=tensor.period_index, selection=None))

    def build_rows(positions, need_y: bool):
        cols, roles, groups, penalize, dense = [], [], [], [], []
        n = len(positions)
        cols.append(np.ones(n))
        roles.append(ColumnRole("intercept"))
        penalize.append(False)
        dense.append(False)
        for j in range(1, config.ar_lags + 1):
            lag_ok = [t - j in y_map for t in positions]
            if not all(lag_ok):
                raise SpanError(f"AR lag {j} unavailable for some requested periods")
            cols.append(np.array([y_map[t - j] for t in positions]))
            roles.append(ColumnRole("ar_lag", index=j))
            penalize.append(False)
            dense.append(False)
        for pid, tensor in sorted(predictor_tensors.items()):
            lookup = {t: i for i, t in enumerate(tensor.period_index)}
            sel = np.array([lookup[t] for t in positions], dtype=int)
            role = config.role_for(pid)
            k_n, c_n = tensor.values.shape[:2]
            for k in range(k_n):
                start = len(cols)
                for d in range(c_n):
                    cols.append(tensor.values[k, d, sel])
                    roles.append(ColumnRole("predictor", panel=pid,
                                            series=str(tensor.series_keys[k]) if tensor.series_keys else str(k),
                                            index=d))
                    penalize.append(True)
                    dense.append(role.include_dense)
                if kind in UMIDAS_KINDS:
                    groups.extend(np.array([start + d]) for d in range(c_n))
                else:
                    groups.append(np.arange(start, start + c_n))
        for block in factor_blocks:
            lookup = {t: i for i, t in enumerate(block.period_index)}
            sel = np.array([lookup[t] for t in positions], dtype=int)
            r_n, c_n = block.values.shape[:2]
            for r in range(r_n):
                for d in range(c_n):
                    cols.append(block.values[r, d, sel])
                    roles.append(ColumnRole("factor", panel=block.panel_id, series=str(r), index=d))
                    penalize.append(False)
                    dense.append(False)
        X = np.column_stack(cols) if cols else np.empty((n, 0))
        return X, roles, groups, np.array(penalize), np.array(dense)

    X, roles, groups, penalize, dense = build_rows(train_positions, need_y=True)
    y = np.array([y_map[t] for t in train_positions])

    # Unit-variance scaling of penalized columns for penalty comparability.
    scales = np.ones(X.shape[1])
    if penalize.any():
        sds = X[:, penalize].std(axis=0, ddof=1)
        sds[sds <= 1e-12] = 1.0
        scales[penalize] = sds
    X = X / scales

    design = DesignAssembly(y=y, X=X, roles=roles, groups=groups,
                            penalize_mask=penalize, dense_mask=dense if dense.any() else None,
                            column_scales=scales,
                            periods=pd.PeriodIndex([calendar[t] for t in train_positions]))

    predict_row = None
    if with_predict_row:
        for tensor in blocks:
            if origin_pos not in tensor.period_index:
                raise RaggedEdgeError(
                    f"origin {origin}: required high-frequency window incomplete")
        if not all(origin_pos - j in y_map for j in range(1, config.ar_lags + 1)):
            raise RaggedEdgeError(f"origin {origin}: AR lags of the target unavailable")
        row, *_ = build_rows(np.array([origin_pos]), need_y=False)
        predict_row = (row[0] / scales)

    return Assembled(design=design, predict_row=predict_row, origin=origin,
                     train_periods=design.periods, factor_blocks=factor_blocks)


@dataclass
class FittedNowcastModel:
    config: ModelConfig
    solution: Solution
    assembled: Assembled
    penalty: PenaltySpec

    def coefficient_table(self) -> pd.DataFrame:
        """Destandardized coefficients: role, panel, series, d, value."""
        rows = []
        for role, coef, scale in zip(self.assembled.design.roles,
                                     self.solution.coefficients,
                                     self.assembled.design.column_scales):
            rows.append({"role": role.kind, "panel": role.panel, "series": role.series,
                         "d": role.index, "value": coef / scale})
        return pd.DataFrame(rows)


def fit_with_penalty(design: DesignAssembly, kind: ModelKind, penalty: PenaltySpec,
                     opts: SolverOptions, warm_start: np.ndarray | None = None) -> Solution:
    if kind in (ModelKind.AR, ModelKind.FAMIDAS):
        return ols_fit(design)
    if kind == ModelKind.RIDGE_MIDAS:
        return ridge_fit(design, penalty.mu)
    if kind == ModelKind.SG_LAVA_MIDAS:
        return lava_fit(design, penalty.mu1, penalty.mu2, penalty.effective_alpha(), opts)
    return fit_proximal(design, penalty, opts, warm_start=warm_start)


def fit_model(config: ModelConfig, assembled: Assembled,
              penalty: PenaltySpec | None = None) -> FittedNowcastModel:
    penalty = penalty or PenaltySpec(kind="none")
    solution = fit_with_penalty(assembled.design, config.kind, penalty, config.solver)
    return FittedNowcastModel(config=config, solution=solution, assembled=assembled,
                              penalty=penalty)


def predict_one(model: FittedNowcastModel, row: np.ndarray | None = None) -> float:
    row = model.assembled.predict_row if row is None else row
    if row is None:
        raise RaggedEdgeError("no prediction row assembled for the origin")
    return float(row @ model.solution.coefficients)


def contiguous_folds(n: int, folds: int):
    """Partition 0..n-1 into `folds` contiguous blocks."""
    edges = np.linspace(0, n, folds + 1).round().astype(int)
    return [np.arange(edges[i], edges[i + 1]) for i in range(folds)]


def default_penalty_grid(config: ModelConfig, design: DesignAssembly) -> list[PenaltySpec]:
    """Candidate penalties, ordered from heaviest to lightest shrinkage."""
    kind = config.kind
    if kind in (ModelKind.AR, ModelKind.FAMIDAS):
        return [PenaltySpec(kind="none")]
    anchor = mu_max(design, config.alpha if kind != ModelKind.RIDGE_MIDAS else 1.0)
    anchor = max(anchor, 1e-12)
    if config.mu_grid is not None:
        mus = sorted((float(m) for m in config.mu_grid), reverse=True)
    else:
        mus = list(np.geomspace(anchor, anchor * config.mu_grid_min_ratio,
                                config.mu_grid_size))
    if kind == ModelKind.SG_LAVA_MIDAS:
        if config.mu2_grid is not None:
            mu2s = sorted((float(m) for m in config.mu2_grid), reverse=True)
        else:
            mu2s = list(np.geomspace(anchor * 10, anchor * 1e-3, config.mu2_grid_size))
        return [PenaltySpec(kind="lava", mu1=m1, mu2=m2, alpha=config.alpha)
                for m1 in mus for m2 in mu2s]
    if kind == ModelKind.RIDGE_MIDAS:
        return [PenaltySpec(kind="ridge", mu=m) for m in mus]
    return [PenaltySpec(kind="sparse_group", mu=m, alpha=config.alpha) for m in mus]


def _penalty_weight(p: PenaltySpec):
    # Tie-break key: smaller total penalty wins.
    return (p.mu1 or 0.0) + (p.mu2 or 0.0) + p.mu


def blocked_cv_tune(config: ModelConfig, design: DesignAssembly,
                    grid: list[PenaltySpec] | None = None) -> PenaltySpec:
    """Contiguous-block CV over the penalty grid; smallest-penalty tie-break."""
    grid = grid if grid is not None else default_penalty_grid(config, design)
    if len(grid) == 1:
        return grid[0]
    folds = contiguous_folds(design.n_obs, config.cv.folds)
    all_idx = np.arange(design.n_obs)
    per_fold = np.empty((len(folds), len(grid)))
    for f_idx, hold in enumerate(folds):
        train = np.setdiff1d(all_idx, hold)
        sub = DesignAssembly(y=design.y[train], X=design.X[train], roles=design.roles,
                             groups=design.groups, penalize_mask=design.penalize_mask,
                             dense_mask=design.dense_mask)
        warm = None
        for i, pen in enumerate(grid):
            sol = fit_with_penalty(sub, config.kind, pen, config.solver, warm_start=warm)
            if not sol.converged:
                warnings.warn(f"CV fit did not converge at grid point {i}; scored +inf")
                per_fold[f_idx, i] = np.inf
                continue
            if config.kind not in (ModelKind.SG_LAVA_MIDAS, ModelKind.RIDGE_MIDAS):
                warm = sol.coefficients
            resid = design.y[hold] - design.X[hold] @ sol.coefficients
            per_fold[f_idx, i] = float(resid @ resid) / len(hold)
    scores = per_fold.mean(axis=0)
    best, best_key = 0, (np.inf, np.inf, 0)
    for i, pen in enumerate(grid):
        key = (scores[i], _penalty_weight(pen), i)
        # scores closer than the solver accuracy are ties
        tied = np.isclose(key[0], best_key[0], rtol=1e-6, atol=0.0)
        if (key[0] < best_key[0] and not tied) or (tied and key[1] < best_key[1]):
            best, best_key = i, key
    return grid[best]
