"""Factor extraction: standardization, soft-impute completion, PCA, rank rules.

Factors are estimated by principal components on the stacked MIDAS-aggregated
regressors (rows = (dictionary column, period) pairs, columns = series). The
number of factors comes from the growth-ratio or eigenvalue-ratio criterion.
Unbalanced panels are completed beforehand by nuclear-norm-regularized
soft-impute at the original observation frequency.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import AggregatedTensor, LagLeadSpec, LegendreBasis, aggregate
from .errors import (
    ConvergenceError,
    DegenerateColumnError,
    DegenerateSpectrumError,
    RankDeficiencyError,
    UnidentifiableError,
)
from .panel import HighFrequencyPanel, RawSeries, align_to_target


@dataclass
class StandardizedMatrix:
    """Column-standardized data (mean 0, sample sd 1, ddof=1)."""

    matrix: np.ndarray
    column_means: np.ndarray
    column_sds: np.ndarray


@dataclass
class FactorModelFit:
    """PCA fit with loadings normalized so loadings.T @ loadings / K = I."""

    loadings: np.ndarray       # (K, R)
    factor_scores: np.ndarray  # (rows, R)
    eigenvalues: np.ndarray    # sample covariance spectrum, descending
    panel_id: str = ""


@dataclass
class RankSelection:
    method: str  # 'growth_ratio' | 'eigenvalue_ratio' | 'fixed'
    kmax: int
    selected: int

    def __post_init__(self):
        if not 1 <= self.selected <= self.kmax:
            raise ValueError("selected rank must lie in 1..kmax")


@dataclass
class CompletionConfig:
    max_rank: int = 6
    lam: float | None = None    # None = automatic lambda path
    tolerance: float = 1e-6
    max_iterations: int = 500
    shrink_factor: float = 0.7
    path_length: int = 40

    def __post_init__(self):
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


def standardize(matrix: np.ndarray, series_keys=None) -> StandardizedMatrix:
    """Center and scale columns; rejects constant columns."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 2:
        raise ValueError("need a 2-d matrix with at least 2 rows")
    if np.isnan(matrix).any():
        raise ValueError("standardize requires a complete matrix")
    means = matrix.mean(axis=0)
    sds = matrix.std(axis=0, ddof=1)
    bad = np.flatnonzero(sds <= 0)
    if len(bad):
        name = series_keys[bad[0]] if series_keys is not None else f"column {bad[0]}"
        raise DegenerateColumnError(f"zero-variance column: {name}")
    return StandardizedMatrix((matrix - means) / sds, means, sds)


def soft_impute_objective(matrix: np.ndarray, mask: np.ndarray, low_rank: np.ndarray,
                          lam: float) -> float:
    """0.5 * ||P_obs(M - Z)||_F^2 + lam * nuclear_norm(Z)."""
    resid = np.where(mask, matrix - low_rank, 0.0)
    nuc = np.linalg.svd(low_rank, compute_uv=False).sum()
    return 0.5 * float((resid ** 2).sum()) + lam * float(nuc)


def soft_impute(matrix: np.ndarray, config: CompletionConfig, lam: float | None = None,
                z_init: np.ndarray | None = None, collect_objective: bool = False):
    """Iterative SVD soft-thresholding for one penalty level.

    Returns (completed, low_rank, trace). `completed` keeps observed entries
    and fills missing ones from the low-rank iterate.
    """
    matrix = np.asarray(matrix, dtype=float)
    mask = ~np.isnan(matrix)
    if mask.all():
        return matrix.copy(), matrix.copy(), []
    if not mask.any(axis=1).all() or not mask.any(axis=0).all():
        raise UnidentifiableError("soft_impute needs >= 1 observed entry per row and column")
    lam = config.lam if lam is None else lam
    if lam is None:
        lam = float(np.linalg.svd(np.where(mask, matrix, 0.0), compute_uv=False)[0])
    z = np.zeros_like(matrix) if z_init is None else z_init.copy()
    trace = []
    for _ in range(config.max_iterations):
        filled = np.where(mask, matrix, z)
        u, sv, vt = np.linalg.svd(filled, full_matrices=False)
        sv = np.maximum(sv - lam, 0.0)[: config.max_rank]
        z_new = (u[:, : len(sv)] * sv) @ vt[: len(sv)]
        if collect_objective:
            trace.append(soft_impute_objective(matrix, mask, z_new, lam))
        denom = max(float(np.linalg.norm(z)), 1e-12)
        change = float(np.linalg.norm(z_new - z)) / denom
        z = z_new
        if change < config.tolerance:
            completed = np.where(mask, matrix, z)
            return completed, z, trace
    raise ConvergenceError(
        f"soft_impute: no convergence in {config.max_iterations} iterations",
        last_iterate=np.where(mask, matrix, z),
    )


def lambda_zero(matrix: np.ndarray) -> float:
    """Smallest penalty returning the zero solution: top singular value of the
    zero-filled matrix."""
    filled = np.nan_to_num(np.asarray(matrix, dtype=float), nan=0.0)
    return float(np.linalg.svd(filled, compute_uv=False)[0])


def soft_impute_path(matrix: np.ndarray, config: CompletionConfig):
    """Warm-started penalty path from lambda_0 downward.

    Shrinks lambda geometrically until the fitted rank reaches max_rank - 1 or
    the path is exhausted; returns the final (completed, low_rank, lam).
    """
    matrix = np.asarray(matrix, dtype=float)
    mask = ~np.isnan(matrix)
    if mask.all():
        return matrix.copy(), matrix.copy(), 0.0
    lam = lambda_zero(matrix)
    z = None
    completed, low_rank = matrix.copy(), np.zeros_like(matrix)
    for _ in range(config.path_length):
        lam *= config.shrink_factor
        completed, low_rank, _ = soft_impute(matrix, config, lam=lam, z_init=z)
        z = low_rank
        sv = np.linalg.svd(low_rank, compute_uv=False)
        fitted_rank = int((sv > 1e-10 * max(sv[0], 1e-300)).sum())
        if fitted_rank >= config.max_rank - 1:
            break
    return completed, low_rank, lam


def complete_panel(panel: HighFrequencyPanel, config: CompletionConfig | None = None
                   ) -> HighFrequencyPanel:
    """Fill missing panel cells by soft-impute at the observation frequency.

    Works on the time-by-series matrix restricted to the span where at least
    one series is observed; columns are scaled to unit nan-variance first and
    rescaled afterwards. Fully balanced panels pass through unchanged.
    """
    config = config or CompletionConfig()
    k, t, m = panel.values.shape
    mat = panel.values.reshape(k, t * m).T  # rows = chronological hf time
    if not np.isnan(mat).any():
        return panel
    row_obs = ~np.isnan(mat).all(axis=1)
    span = np.flatnonzero(row_obs)
    lo, hi = span[0], span[-1] + 1
    sub = mat[lo:hi]
    means = np.nanmean(sub, axis=0)
    sds = np.nanstd(sub, axis=0, ddof=1)
    if np.any(sds <= 0):
        raise DegenerateColumnError(
            f"panel {panel.panel_id}: constant series cannot be completed")
    completed, _, _ = soft_impute_path((sub - means) / sds, config)
    mat = mat.copy()
    obs = ~np.isnan(sub)
    mat[lo:hi] = np.where(obs, sub, completed * sds + means)
    return HighFrequencyPanel(
        panel_id=panel.panel_id,
        series_keys=list(panel.series_keys),
        values=mat.T.reshape(k, t, m),
        target_calendar=panel.target_calendar,
        frequency=panel.frequency,
    )


def pca_extract(std: StandardizedMatrix, rank: int, panel_id: str = "") -> FactorModelFit:
    """Principal components with the loadings.T @ loadings / K = I normalization.

    Deterministic sign: the largest-magnitude entry of each loading vector is
    made positive.
    """
    s = std.matrix
    rows, k = s.shape
    if rank > min(rows, k):
        raise RankDeficiencyError(f"rank {rank} exceeds min(rows, columns) = {min(rows, k)}")
    u, sv, vt = np.linalg.svd(s, full_matrices=False)
    eigenvalues = sv ** 2 / rows
    if sv[rank - 1] <= 1e-12 * max(sv[0], 1e-300):
        raise RankDeficiencyError(f"rank {rank} exceeds numerical rank of the data")
    v = vt[:rank].T  # (K, rank), orthonormal columns
    for r in range(rank):
        j = int(np.argmax(np.abs(v[:, r])))
        if v[j, r] < 0:
            v[:, r] = -v[:, r]
    loadings = np.sqrt(k) * v
    scores = s @ loadings / k
    return FactorModelFit(loadings=loadings, factor_scores=scores,
                          eigenvalues=eigenvalues, panel_id=panel_id)


def default_kmax(rows: int, columns: int) -> int:
    return max(1, min(8, columns // 2, rows // 2))


def growth_ratio_select(eigenvalues, kmax: int) -> RankSelection:
    """Ahn-Horenstein growth-ratio criterion.

    GR(k) = ln(V(k-1)/V(k)) / ln(V(k)/V(k+1)) with V(k) the sum of
    eigenvalues beyond k; picks the argmax over 1..kmax (smallest k on ties).
    """
    mu = np.asarray(eigenvalues, dtype=float)
    if len(mu) <= kmax + 1:
        raise ValueError(f"need more than kmax + 1 = {kmax + 1} eigenvalues, got {len(mu)}")
    if np.any(np.diff(mu) > 1e-12):
        raise ValueError("eigenvalues must be sorted descending")
    tails = np.concatenate([np.cumsum(mu[::-1])[::-1], [0.0]])  # tails[k] = V(k-1)
    v = tails[: kmax + 2]  # V(0)..V(kmax+1)
    if np.any(v[1:] <= 0):
        raise DegenerateSpectrumError("non-positive tail sum in growth-ratio scan")
    gr = np.log(v[:-2] / v[1:-1]) / np.log(v[1:-1] / v[2:])
    selected = int(np.argmax(np.round(gr, 12))) + 1
    return RankSelection(method="growth_ratio", kmax=kmax, selected=selected)


def eigenvalue_ratio_select(eigenvalues, kmax: int) -> RankSelection:
    """ER(k) = mu_k / mu_{k+1}; argmax over 1..kmax, smallest k on ties."""
    mu = np.asarray(eigenvalues, dtype=float)
    if len(mu) < kmax + 1:
        raise ValueError(f"need at least kmax + 1 = {kmax + 1} eigenvalues, got {len(mu)}")
    if np.any(np.diff(mu) > 1e-12):
        raise ValueError("eigenvalues must be sorted descending")
    if np.any(mu[: kmax + 1] <= 0):
        raise DegenerateSpectrumError("zero eigenvalue inside eigenvalue-ratio scan")
    er = mu[:kmax] / mu[1: kmax + 1]
    selected = int(np.argmax(np.round(er, 12))) + 1
    return RankSelection(method="eigenvalue_ratio", kmax=kmax, selected=selected)


def ingest_external_factor(series: RawSeries, spec: LagLeadSpec, basis: LegendreBasis,
                           target_calendar=None) -> AggregatedTensor:
    """Treat an observed indicator series as a single factor.

    The series is aligned and MIDAS-aggregated exactly like a predictor, so it
    can be appended as an unpenalized factor block.
    """
    import pandas as pd

    if series.frequency.m != spec.m:
        raise ValueError(
            f"series {series.key}: frequency m={series.frequency.m} does not match spec m={spec.m}")
    if target_calendar is None:
        obs = series.observations.dropna()
        target_calendar = pd.period_range(
            pd.Period(obs.index[0], freq="Q"), pd.Period(obs.index[-1], freq="Q"), freq="Q")
    panel = align_to_target([series], target_calendar, panel_id=f"factor:{series.key}")
    return aggregate(panel, spec, basis)


@dataclass
class PanelFactors:
    """Aggregated factor block for one panel: scores reshaped to (R, D+1, T)."""

    panel_id: str
    tensor_values: np.ndarray  # (R, n_columns, n_periods)
    period_index: np.ndarray
    fit: FactorModelFit | None
    selection: RankSelection | None = None


def extract_panel_factors(tensor: AggregatedTensor, rank: int | None = None,
                          method: str = "growth_ratio", kmax: int | None = None,
                          panel_id: str = "") -> PanelFactors:
    """PCA on the stacked aggregated regressors of one panel.

    The (K, C, T) tensor is stacked into a (C*T, K) matrix, standardized, and
    decomposed; scores are reshaped back to a (R, C, T) factor tensor that
    plugs into the design exactly like aggregated predictors.
    """
    k, c, t = tensor.values.shape
    stacked = tensor.values.reshape(k, c * t).T  # rows ordered (column-major in (d, t))
    std = standardize(stacked, series_keys=tensor.series_keys)
    rows = stacked.shape[0]
    if kmax is None:
        kmax = default_kmax(rows, k)
    full = pca_extract(std, rank=min(k, rows), panel_id=panel_id)
    if rank is not None:
        selection = RankSelection(method="fixed", kmax=max(kmax, rank), selected=rank)
    elif method == "eigenvalue_ratio":
        selection = eigenvalue_ratio_select(full.eigenvalues, kmax)
    else:
        selection = growth_ratio_select(full.eigenvalues, kmax)
    r = selection.selected
    fit = FactorModelFit(loadings=full.loadings[:, :r], factor_scores=full.factor_scores[:, :r],
                         eigenvalues=full.eigenvalues, panel_id=panel_id)
    scores = fit.factor_scores.T.reshape(r, c, t)
    return PanelFactors(panel_id=panel_id, tensor_values=scores,
                        period_index=tensor.period_index, fit=fit, selection=selection)
