"""Synthetic sparse-plus-dense mixed-frequency data generator.

Builds a high-frequency factor panel (loadings times AR(1) factors plus
idiosyncratic noise), a quarterly target driven by an AR component, a handful
of active series, and a dense factor channel, with an optional late-sample
regime shift that amplifies the common component. Output is a single-snapshot
VintageStore in the standard ingestion schema plus the ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError
from .panel import SeriesMeta, VintageStore


@dataclass
class SyntheticPanelSpec:
    panel_id: str
    n_series: int
    m: int = 3                 # 3 = monthly, 13 = weekly, 1 = quarterly
    n_factors: int = 1
    idio_sd: float = 1.0
    factor_ar: float = 0.7
    missing_frac: float = 0.0  # uniformly masked cells (completion exercise)

    def frequency_label(self) -> str:
        return {1: "quarterly", 3: "monthly", 13: "weekly"}.get(self.m) or "weekly"


@dataclass
class RegimeShift:
    start_quarter: int          # 0-based quarter index where the shift begins
    amplify: float = 5.0        # multiplier on the common component
    idio_amplify: float = 1.0   # multiplier on idiosyncratic volatility


@dataclass
class DgpConfig:
    seed: int = 0
    n_quarters: int = 160
    panels: list = field(default_factory=lambda: [
        SyntheticPanelSpec("macro", 40, m=3, n_factors=1),
        SyntheticPanelSpec("financial", 20, m=13, n_factors=0),
    ])
    sparsity: int = 5           # active series, drawn from the first panel
    sparse_scale: float = 1.0
    dense_scale: float = 0.5    # loading of the first panel's first factor on Y
    noise_sd: float = 0.5
    ar_intercept: float = 0.2
    ar_coefs: tuple = (0.3, 0.1, 0.05, 0.05)
    shift: RegimeShift | None = None
    start_period: str = "1980Q1"

    def __post_init__(self):
        if self.n_quarters < 20:
            raise ConfigError("n_quarters must be >= 20")
        if not self.panels:
            raise ConfigError("at least one panel required")
        if self.sparsity > self.panels[0].n_series:
            raise ConfigError("sparsity exceeds the first panel's series count")
        if self.shift is not None and not 0 < self.shift.start_quarter < self.n_quarters:
            raise ConfigError("shift start outside the sample")


@dataclass
class TruthRecord:
    config: DgpConfig
    active_series: list
    sparse_coefs: dict          # series_id -> flat-weight coefficient
    loadings: dict              # panel_id -> (K, R) array
    factors: dict               # panel_id -> (R, n_quarters, m) array
    target: pd.Series


def _hf_dates(start: pd.Period, n_quarters: int, m: int) -> list:
    """Deterministic intra-quarter dates mapping to slots 1..m."""
    dates = []
    for t in range(n_quarters):
        quarter = start + t
        if m == 3:
            for month in range(3):
                dates.append((t, month + 1,
                              (quarter.start_time + pd.offsets.MonthEnd(month + 1))))
        else:
            for j in range(m):
                dates.append((t, j + 1, quarter.start_time + pd.Timedelta(days=7 * j)))
    return dates


def synthetic_dgp(config: DgpConfig) -> tuple[VintageStore, TruthRecord]:
    """Generate a store plus ground truth; identical seeds give identical data."""
    rng = np.random.default_rng(config.seed)
    start = pd.Period(config.start_period, freq="Q")
    T = config.n_quarters
    amp = np.ones(T)
    amp_idio = np.ones(T)
    if config.shift is not None:
        amp[config.shift.start_quarter:] = config.shift.amplify
        amp_idio[config.shift.start_quarter:] = config.shift.idio_amplify

    panel_values = {}   # panel_id -> (K, T, m)
    loadings = {}
    factors = {}
    for spec in config.panels:
        n_hf = T * spec.m
        f = np.zeros((max(spec.n_factors, 1), n_hf))
        for r in range(spec.n_factors):
            eps = rng.standard_normal(n_hf) * np.sqrt(1 - spec.factor_ar ** 2)
            for h in range(1, n_hf):
                f[r, h] = spec.factor_ar * f[r, h - 1] + eps[h]
            f[r, 0] = eps[0] / np.sqrt(1 - spec.factor_ar ** 2)
        # Amplify the common component inside shifted quarters.
        f_amp = f * np.repeat(amp, spec.m)[None, :]
        lam = rng.standard_normal((spec.n_series, spec.n_factors))
        idio = rng.standard_normal((spec.n_series, n_hf)) * spec.idio_sd \
            * np.repeat(amp_idio, spec.m)[None, :]
        x = (lam @ f_amp[: spec.n_factors] if spec.n_factors else 0.0) + idio
        panel_values[spec.panel_id] = x.reshape(spec.n_series, T, spec.m)
        loadings[spec.panel_id] = lam
        factors[spec.panel_id] = f_amp[: max(spec.n_factors, 1)].reshape(-1, T, spec.m)

    first = config.panels[0]
    active = sorted(rng.choice(first.n_series, size=config.sparsity, replace=False).tolist()) \
        if config.sparsity else []
    sparse_coefs = {}
    for k in active:
        sparse_coefs[k] = config.sparse_scale * rng.choice([-1.0, 1.0]) \
            * rng.uniform(0.5, 1.5)
    # Identify the two channels: project the sparse coefficients off the
    # factor loadings over the active set, so the target's total exposure to
    # the common component is dense_scale exactly rather than dense_scale
    # plus a seed-dependent sum of active-series loadings.
    if first.n_factors and len(active) > 1:
        lam0 = loadings[first.panel_id][active, 0]
        b = np.array([sparse_coefs[k] for k in active])
        b -= (b @ lam0) / (lam0 @ lam0) * lam0
        sparse_coefs = dict(zip(active, b))

    # Quarterly drivers use the previous quarter's within-period mean (flat weights).
    x_first = panel_values[first.panel_id]
    sparse_drive = np.zeros(T)
    for t in range(1, T):
        for k, b in sparse_coefs.items():
            sparse_drive[t] += b * x_first[k, t - 1].mean()
    if first.n_factors:
        f_mean = factors[first.panel_id][0].mean(axis=1)  # amplified factor, quarter means
        dense_drive = np.concatenate([[0.0], config.dense_scale * f_mean[:-1]])
    else:
        dense_drive = np.zeros(T)

    J = len(config.ar_coefs)
    y = np.zeros(T)
    noise = rng.standard_normal(T) * config.noise_sd
    for t in range(T):
        ar = sum(config.ar_coefs[j] * y[t - 1 - j] for j in range(J) if t - 1 - j >= 0)
        y[t] = config.ar_intercept + ar + sparse_drive[t] + dense_drive[t] + noise[t]

    # Emit long-format records.
    panel_rows = []
    metas = []
    for spec in config.panels:
        vals = panel_values[spec.panel_id]
        mask = rng.random(vals.shape) < spec.missing_frac if spec.missing_frac else None
        for k in range(spec.n_series):
            sid = f"{spec.panel_id}_{k:03d}"
            metas.append(SeriesMeta(sid, spec.panel_id, spec.frequency_label(), 1))
            for t, slot, date in _hf_dates(start, T, spec.m):
                v = vals[k, t, slot - 1]
                if mask is not None and mask[k, t, slot - 1]:
                    v = np.nan
                panel_rows.append((sid, date, v))
    panel_df = pd.DataFrame(panel_rows, columns=["series_id", "date", "value"])
    periods = pd.period_range(start, periods=T, freq="Q")
    target_df = pd.DataFrame({"date": periods.to_timestamp(), "value": y})
    store = VintageStore(panel_df, target_df, metas, release_lag=1)
    truth = TruthRecord(
        config=config,
        active_series=[f"{first.panel_id}_{k:03d}" for k in active],
        sparse_coefs={f"{first.panel_id}_{k:03d}": b for k, b in sparse_coefs.items()},
        loadings=loadings, factors=factors,
        target=pd.Series(y, index=periods),
    )
    return store, truth
