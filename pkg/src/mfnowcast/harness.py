"""Expanding-window, multi-horizon nowcast evaluation.

For each origin quarter and horizon the harness slices the vintage store at
the horizon's information date, rebuilds the panels, tunes (per the re-tune
cadence), fits every model, and records the nowcast error against the first
release. Reports aggregate relative RMSEs over configurable subsamples and
square-root-cumulative-sum error paths.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import DataError
from .models import (
    ModelConfig,
    ModelKind,
    assemble_design,
    blocked_cv_tune,
    build_panels,
    fit_model,
    predict_one,
)
from .panel import FREQUENCY_M, VintageStore


@dataclass
class Horizon:
    """Nowcast horizon: information date and per-frequency lead counts."""

    label: str
    months_into_quarter: int            # 1, 2, or 3; fixes the information date
    leads: dict = field(default_factory=dict)  # frequency label -> lead count

    def information_date(self, origin: pd.Period) -> pd.Timestamp:
        return origin.start_time.normalize() + pd.offsets.MonthEnd(self.months_into_quarter)


def default_horizons() -> list[Horizon]:
    return [
        Horizon("2-month", 1, {"monthly": 1, "weekly": 4, "quarterly": 0}),
        Horizon("1-month", 2, {"monthly": 2, "weekly": 8, "quarterly": 0}),
        Horizon("EoQ", 3, {"monthly": 3, "weekly": 13, "quarterly": 0}),
    ]


@dataclass
class Subsample:
    label: str
    start: pd.Period | None = None
    end: pd.Period | None = None

    def contains(self, period: pd.Period) -> bool:
        return (self.start is None or period >= self.start) and \
            (self.end is None or period <= self.end)


def default_subsamples() -> list[Subsample]:
    return [
        Subsample("full"),
        Subsample("pre-covid", end=pd.Period("2019Q4", freq="Q")),
        Subsample("covid-onward", start=pd.Period("2020Q1", freq="Q")),
    ]


@dataclass
class HarnessConfig:
    first_origin: pd.Period
    last_origin: pd.Period
    in_sample_end: pd.Period | None = None
    horizons: list = field(default_factory=default_horizons)
    subsamples: list = field(default_factory=default_subsamples)
    benchmark: str = "AR"
    retune_every: int = 1
    balance: str = "complete"

    def __post_init__(self):
        self.first_origin = pd.Period(self.first_origin, freq="Q")
        self.last_origin = pd.Period(self.last_origin, freq="Q")
        if self.in_sample_end is None:
            self.in_sample_end = self.first_origin - 1
        else:
            self.in_sample_end = pd.Period(self.in_sample_end, freq="Q")
        if self.first_origin <= self.in_sample_end:
            raise DataError("first_origin must follow in_sample_end")
        if not self.horizons:
            raise DataError("at least one horizon required")
        if self.retune_every < 1:
            raise DataError("retune_every must be >= 1")


@dataclass
class NowcastRecord:
    origin: pd.Period
    horizon: str
    model: str
    nowcast: float
    realized: float
    failed: str = ""

    @property
    def error(self) -> float:
        return self.realized - self.nowcast


def _leads_for_model(config: ModelConfig, horizon: Horizon, freq_of_panel: dict) -> ModelConfig:
    specs = {}
    for panel_id, spec in config.lag_specs.items():
        label = freq_of_panel.get(panel_id)
        lead = horizon.leads.get(label, 0) if label else spec.leads
        specs[panel_id] = replace(spec, leads=min(lead, spec.m))
    return replace(config, lag_specs=specs)


def run_expanding(config: HarnessConfig, models: list[ModelConfig],
                  store: VintageStore) -> list[NowcastRecord]:
    """Expanding-window backtest; failures are recorded, not fatal."""
    origins = pd.period_range(config.first_origin, config.last_origin, freq="Q")
    freq_of_panel = {}
    panel_of = {}
    for meta in store.metadata.values():
        panel_of[meta.series_id] = meta.panel_id
        freq_of_panel[meta.panel_id] = meta.frequency
        freq_of_panel[f"external:{meta.series_id}"] = meta.frequency
    records: list[NowcastRecord] = []
    tuned_cache: dict = {}
    for o_idx, origin in enumerate(origins):
        realized = store.first_release(origin)
        for horizon in config.horizons:
            as_of = horizon.information_date(origin)
            target, series_list = store.vintage_slice(as_of)
            # No-look-ahead audit: nothing in the slice may postdate as_of.
            max_ts = max((s.observations.index.max() for s in series_list),
                         default=pd.Timestamp.min)
            if max_ts > as_of:
                raise DataError(f"look-ahead: observation at {max_ts} visible at {as_of}")
            if len(target.values) == 0:
                records.extend(NowcastRecord(origin, horizon.label, m.name, np.nan,
                                             realized if realized is not None else np.nan,
                                             failed="no target data")
                               for m in models)
                continue
            calendar = pd.period_range(
                min(target.values.index.min(),
                    pd.Period(min(s.observations.index.min() for s in series_list), freq="Q")
                    if series_list else target.values.index.min()),
                origin, freq="Q")
            panels = build_panels(series_list, panel_of, calendar, balance=config.balance) \
                if series_list else {}
            external = {s.key: s for s in series_list}
            for mc in models:
                mc_h = _leads_for_model(mc, horizon, freq_of_panel)
                key = (mc.name, horizon.label)
                try:
                    used_panels = {pid: p for pid, p in panels.items()
                                   if pid in mc_h.lag_specs}
                    assembled = assemble_design(mc_h, target, used_panels, origin, calendar,
                                                external_series=external)
                    if key not in tuned_cache or o_idx % config.retune_every == 0:
                        tuned_cache[key] = blocked_cv_tune(mc_h, assembled.design)
                    fitted = fit_model(mc_h, assembled, tuned_cache[key])
                    nowcast = predict_one(fitted)
                    records.append(NowcastRecord(
                        origin, horizon.label, mc.name, nowcast,
                        realized if realized is not None else np.nan))
                except Exception as exc:  # recorded, run continues
                    records.append(NowcastRecord(
                        origin, horizon.label, mc.name, np.nan,
                        realized if realized is not None else np.nan,
                        failed=f"{type(exc).__name__}: {exc}"))
    return records


def _errors(records, model: str, horizon: str, subsample: Subsample | None = None):
    sel = [r for r in records
           if r.model == model and r.horizon == horizon and not r.failed
           and np.isfinite(r.realized) and np.isfinite(r.nowcast)
           and (subsample is None or subsample.contains(r.origin))]
    sel.sort(key=lambda r: r.origin)
    return np.array([r.error for r in sel]), [r.origin for r in sel]


def relative_rmse(records, benchmark_records, subsample: Subsample | None = None) -> float:
    """sqrt(mean model SSE) / sqrt(mean benchmark SSE) on matching origins."""
    model_map = {(r.origin, r.horizon): r for r in records if not r.failed}
    bench_map = {(r.origin, r.horizon): r for r in benchmark_records if not r.failed}
    keys = [k for k in model_map
            if k in bench_map and (subsample is None or subsample.contains(k[0]))]
    if not keys:
        raise DataError("empty subsample in relative_rmse")
    me = np.array([model_map[k].error for k in keys])
    be = np.array([bench_map[k].error for k in keys])
    return float(np.sqrt(np.mean(me ** 2)) / np.sqrt(np.mean(be ** 2)))


def cumsum_series(records, subsample: Subsample | None = None) -> np.ndarray:
    """Square-root running sum of squared errors, ordered by origin."""
    sel = sorted((r for r in records if not r.failed
                  and (subsample is None or subsample.contains(r.origin))),
                 key=lambda r: r.origin)
    errors = np.array([r.error for r in sel])
    return np.sqrt(np.cumsum(errors ** 2))


@dataclass
class EvaluationReport:
    table: pd.DataFrame          # model, horizon, subsample, metric, value
    cumsum: dict                 # (model, horizon, subsample) -> np.ndarray
    records: pd.DataFrame

    def to_long_csv(self, path):
        self.table.to_csv(path, index=False, float_format="%.10g")

    def to_json(self, path):
        nested: dict = {}
        for _, row in self.table.iterrows():
            nested.setdefault(row["subsample"], {}).setdefault(
                row["model"], {})[row["horizon"]] = row["value"]
        with open(path, "w") as fh:
            json.dump(nested, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def cumsum_to_csv(self, path):
        rows = []
        for (model, horizon, subsample), series in sorted(self.cumsum.items()):
            for i, v in enumerate(series):
                rows.append({"model": model, "horizon": horizon, "subsample": subsample,
                             "step": i, "value": v})
        pd.DataFrame(rows).to_csv(path, index=False, float_format="%.10g")


def subsample_report(records: list[NowcastRecord], config: HarnessConfig,
                     models: list[str] | None = None) -> EvaluationReport:
    """Relative-RMSE table (benchmark absolute) plus CUMSUM paths per block."""
    if models is None:
        models = sorted({r.model for r in records})
    horizons = [h.label for h in config.horizons]
    bench = [r for r in records if r.model == config.benchmark]
    rows = []
    cumsum = {}
    for sub in config.subsamples:
        for model in models:
            mine = [r for r in records if r.model == model]
            for horizon in horizons:
                mh = [r for r in mine if r.horizon == horizon]
                try:
                    if model == config.benchmark or not bench:
                        errs, _ = _errors(records, model, horizon, sub)
                        if len(errs) == 0:
                            raise DataError("no records")
                        value = float(np.sqrt(np.mean(errs ** 2)))
                        metric = "rmse"
                    else:
                        value = relative_rmse(mh, bench, sub)
                        metric = "relative_rmse"
                except DataError:
                    value, metric = np.nan, "missing"
                rows.append({"model": model, "horizon": horizon, "subsample": sub.label,
                             "metric": metric, "value": value})
                cumsum[(model, horizon, sub.label)] = cumsum_series(mh, sub)
    rec_rows = [{"origin": str(r.origin), "horizon": r.horizon, "model": r.model,
                 "nowcast": r.nowcast, "realized": r.realized,
                 "error": r.error if not r.failed else np.nan, "failed": r.failed}
                for r in sorted(records, key=lambda r: (r.model, r.horizon, r.origin))]
    return EvaluationReport(table=pd.DataFrame(rows), cumsum=cumsum,
                            records=pd.DataFrame(rec_rows))
