"""Mixed-frequency panels: transforms, target alignment, vintage slicing.

Raw series live as timestamped observations; the alignment step buckets them
into (series, target period, intra-period slot) cells of a dense array. T-code
stationarity transforms follow the FRED-MD convention. A VintageStore keeps
long-format records with optional vintage dates and serves point-in-time
slices for real-time (or pseudo-real-time) evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DuplicateSlotError,
    NoVintageError,
    TransformDomainError,
)

# Periods-per-quarter by frequency label (13 weekly slots by convention).
FREQUENCY_M = {"quarterly": 1, "monthly": 3, "weekly": 13}

ALLOWED_TCODES = set(range(1, 8))
# Leading observations consumed by each transform.
LEADS_LOST = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2, 7: 2}


@dataclass(frozen=True)
class Frequency:
    """Observations per target period; 1 means the target frequency itself."""

    periods_per_target: int

    def __post_init__(self):
        if self.periods_per_target < 1:
            raise ValueError("periods_per_target must be >= 1")

    @property
    def m(self) -> int:
        return self.periods_per_target


@dataclass
class RawSeries:
    """One untransformed series: timestamped values with NaN for missing."""

    key: str
    observations: pd.Series  # DatetimeIndex -> float, NaN = missing
    frequency: Frequency
    tcode: int = 1

    def __post_init__(self):
        idx = self.observations.index
        if not idx.is_monotonic_increasing or idx.has_duplicates:
            raise DataError(f"series {self.key}: timestamps must be strictly increasing")
        # the >= 2 ingestion rule is enforced at the store level; transform
        # outputs may legitimately be a single observation
        if int(self.observations.notna().sum()) < 1:
            raise DataError(f"series {self.key}: no non-missing observations")
        if self.tcode not in ALLOWED_TCODES:
            raise DataError(f"series {self.key}: invalid tcode {self.tcode}")


@dataclass
class TargetSeries:
    """Low-frequency target (e.g. quarterly GDP growth)."""

    values: pd.Series  # PeriodIndex -> float
    release_lag: int = 1

    def __post_init__(self):
        idx = self.values.index
        if len(idx) and (idx.max() - idx.min()).n != len(idx) - 1:
            raise DataError("target periods must be contiguous")
        if not np.isfinite(self.values.to_numpy(dtype=float)).all():
            raise DataError("target values must be finite")


@dataclass
class HighFrequencyPanel:
    """Dense (K, T, m) array of one panel's aligned observations."""

    panel_id: str
    series_keys: list
    values: np.ndarray  # (K, T, m), NaN = missing
    target_calendar: pd.PeriodIndex
    frequency: Frequency = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        k, t, m = self.values.shape
        if self.frequency is None:
            self.frequency = Frequency(m)
        if k != len(self.series_keys) or t != len(self.target_calendar) or m != self.frequency.m:
            raise DataError(
                f"panel {self.panel_id}: shape {self.values.shape} inconsistent with "
                f"{len(self.series_keys)} series, {len(self.target_calendar)} periods, "
                f"m={self.frequency.m}"
            )


def apply_tcode(series: RawSeries) -> RawSeries:
    """FRED-MD stationarity transform; drops leading rows eaten by differencing.

    1: level, 2: diff, 3: diff^2, 4: log, 5: diff log, 6: diff^2 log,
    7: diff of percent change.
    """
    code = series.tcode
    s = series.observations.astype(float)
    if code == 1:
        return series
    if code in (4, 5, 6):
        bad = s[s.notna() & (s <= 0)]
        if len(bad):
            raise TransformDomainError(
                f"series {series.key}: log transform of non-positive value at {bad.index[0]}"
            )
    if code == 2:
        out = s.diff()
    elif code == 3:
        out = s.diff().diff()
    elif code == 4:
        out = np.log(s)
    elif code == 5:
        out = np.log(s).diff()
    elif code == 6:
        out = np.log(s).diff().diff()
    elif code == 7:
        out = s.pct_change(fill_method=None).diff()
    else:
        raise DataError(f"invalid tcode {code}")
    out = out.iloc[LEADS_LOST[code]:]
    return RawSeries(series.key, out, series.frequency, tcode=1)


def _weekly_slots(obs: pd.Series, key: str):
    """Assign weekly timestamps to (quarter, slot 1..13) cells.

    Slot = ISO-week position inside the quarter counted by calendar weeks from
    the quarter start; week 14 is dropped. Quarters fully observed except for
    slot 1 get slot 1 padded with their earliest value.
    """
    idx = pd.DatetimeIndex(obs.index)
    quarters = idx.to_period("Q")
    slots = (idx - quarters.start_time).days // 7 + 1
    keep = slots <= 13  # 14-week quarter: drop trailing week
    frame = pd.DataFrame({"q": quarters[keep], "s": slots[keep],
                          "v": obs.to_numpy()[keep]})
    dup = frame.duplicated(["q", "s"])
    if dup.any():
        row = frame[dup].iloc[0]
        raise DuplicateSlotError(
            f"series {key}: duplicate weekly slot {(row['q'], int(row['s']))}")
    cells = {(q, int(s)): v for q, s, v in zip(frame["q"], frame["s"], frame["v"])}
    # Pad slot 1 of 12-week quarters with the first available week.
    stats = frame.groupby("q")["s"].agg(["min", "max", "size"])
    padded = stats[(stats["min"] == 2) & (stats["max"] == 13) & (stats["size"] == 12)]
    for quarter in padded.index:
        cells[(quarter, 1)] = cells[(quarter, 2)]
    return cells


def _monthly_slots(obs: pd.Series, key: str):
    idx = pd.DatetimeIndex(obs.index)
    quarters = idx.to_period("Q")
    slots = (idx.month - 1) % 3 + 1
    frame = pd.DataFrame({"q": quarters, "s": slots, "v": obs.to_numpy()})
    dup = frame.duplicated(["q", "s"])
    if dup.any():
        row = frame[dup].iloc[0]
        raise DuplicateSlotError(
            f"series {key}: duplicate monthly slot {(row['q'], int(row['s']))}")
    return {(q, int(s)): v for q, s, v in zip(frame["q"], frame["s"], frame["v"])}


def _ordered_slots(obs: pd.Series, key: str, m: int, freq: str):
    """Fallback: chronological order within the target period, slots 1..m."""
    cells: dict[tuple[pd.Period, int], float] = {}
    counters: dict[pd.Period, int] = {}
    for ts, val in obs.items():
        period = pd.Period(ts, freq=freq)
        slot = counters.get(period, 0) + 1
        if slot > m:
            continue
        counters[period] = slot
        cells[(period, slot)] = val
    return cells


def align_to_target(series_list: list[RawSeries], target_calendar: pd.PeriodIndex,
                    panel_id: str = "panel") -> HighFrequencyPanel:
    """Place each observation at its (series, target period, slot) cell."""
    if not series_list:
        raise DataError("empty series list")
    m = series_list[0].frequency.m
    if any(s.frequency.m != m for s in series_list):
        raise DataError("all series in a panel must share one frequency")
    values = np.full((len(series_list), len(target_calendar), m), np.nan)
    pos = {p: i for i, p in enumerate(target_calendar)}
    for k, s in enumerate(series_list):
        obs = s.observations.dropna()
        if m == 13:
            cells = _weekly_slots(obs, s.key)
        elif m == 3:
            cells = _monthly_slots(obs, s.key)
        elif m == 1:
            cells = _ordered_slots(obs, s.key, 1, target_calendar.freqstr)
        else:
            cells = _ordered_slots(obs, s.key, m, target_calendar.freqstr)
        for (period, slot), val in cells.items():
            t = pos.get(period)
            if t is not None:
                values[k, t, slot - 1] = val
    return HighFrequencyPanel(
        panel_id=panel_id,
        series_keys=[s.key for s in series_list],
        values=values,
        target_calendar=target_calendar,
        frequency=Frequency(m),
    )


@dataclass
class SeriesMeta:
    series_id: str
    panel_id: str
    frequency: str  # 'monthly' | 'weekly' | 'quarterly'
    tcode: int


class VintageStore:
    """Long-format observation records with optional vintage dates.

    Without a vintage column every record is treated as always visible up to
    its own timestamp (pseudo-real-time, final-vintage evaluation).
    """

    def __init__(self, panel_records: pd.DataFrame, target_records: pd.DataFrame,
                 metadata: list[SeriesMeta], release_lag: int = 1):
        self.panel_records = panel_records.copy()
        self.target_records = target_records.copy()
        self.metadata = {m.series_id: m for m in metadata}
        self.release_lag = release_lag
        for df, cols in ((self.panel_records, ("series_id", "date", "value")),
                         (self.target_records, ("date", "value"))):
            missing = set(cols) - set(df.columns)
            if missing:
                raise DataError(f"records missing columns {sorted(missing)}")
            if "vintage_date" not in df.columns:
                df["vintage_date"] = pd.NaT
        unknown = set(self.panel_records["series_id"]) - set(self.metadata)
        if unknown:
            raise DataError(f"panel records reference series without metadata: {sorted(unknown)[:5]}")

    @property
    def vintage_dates(self) -> pd.DatetimeIndex:
        v = pd.concat([self.panel_records["vintage_date"], self.target_records["vintage_date"]])
        return pd.DatetimeIndex(sorted(v.dropna().unique()))

    @property
    def has_vintages(self) -> bool:
        return len(self.vintage_dates) > 0

    def _release_date(self, period: pd.Period) -> pd.Timestamp:
        # Advance-release timing: end of the first month, release_lag quarters on.
        return period.end_time.normalize() + pd.offsets.MonthEnd(3 * (self.release_lag - 1) + 1)

    def target_slice(self, as_of: pd.Timestamp) -> TargetSeries:
        df = self.target_records
        if df["vintage_date"].notna().any():
            vis = df[df["vintage_date"] <= as_of]
            vis = vis.sort_values("vintage_date").groupby("date", sort=True).last()
            values = pd.Series(vis["value"].to_numpy(),
                               index=pd.PeriodIndex(vis.index, freq="Q"))
        else:
            periods = pd.PeriodIndex(df["date"], freq="Q")
            visible = np.array([self._release_date(p) <= as_of for p in periods])
            values = pd.Series(df["value"].to_numpy()[visible], index=periods[visible])
        values = values.sort_index().dropna()
        return TargetSeries(values=values, release_lag=self.release_lag)

    def vintage_slice(self, as_of) -> tuple[TargetSeries, list[RawSeries]]:
        """Data exactly as known at as_of: latest vintage not after as_of.

        Observations timestamped after as_of are never returned, in either
        real-time or pseudo-real-time mode.
        """
        as_of = pd.Timestamp(as_of)
        if self.has_vintages and as_of < self.vintage_dates[0]:
            raise NoVintageError(f"as_of {as_of.date()} precedes first vintage "
                                 f"{self.vintage_dates[0].date()}")
        df = self.panel_records
        vis = df[(df["vintage_date"].isna() | (df["vintage_date"] <= as_of))
                 & (df["date"] <= as_of)]
        series = []
        for sid, grp in vis.groupby("series_id", sort=True):
            meta = self.metadata[sid]
            grp = grp.sort_values(["date", "vintage_date"]).groupby("date", sort=True).last()
            obs = pd.Series(grp["value"].to_numpy(), index=pd.DatetimeIndex(grp.index))
            if int(obs.notna().sum()) < 2:
                continue  # too short at this vintage; excluded from the slice
            series.append(RawSeries(
                key=sid, observations=obs,
                frequency=Frequency(FREQUENCY_M[meta.frequency]),
                tcode=meta.tcode,
            ))
        return self.target_slice(as_of), series

    def first_release(self, period: pd.Period):
        """Realized value used for error computation: first release if vintaged."""
        df = self.target_records
        periods = pd.PeriodIndex(df["date"], freq="Q")
        rows = df[periods == period]
        if rows.empty:
            return None
        if rows["vintage_date"].notna().any():
            rows = rows.sort_values("vintage_date")
        return float(rows["value"].iloc[0])


def load_panel_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, parse_dates=["date"])
    required = {"series_id", "date", "value"}
    if not required <= set(df.columns):
        raise DataError(f"{path}: panel CSV needs columns {sorted(required)}")
    if "vintage_date" in df.columns:
        df["vintage_date"] = pd.to_datetime(df["vintage_date"])
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    return df


def load_metadata_csv(path) -> list[SeriesMeta]:
    df = pd.read_csv(path)
    required = {"series_id", "panel_id", "frequency", "tcode"}
    if not required <= set(df.columns):
        raise DataError(f"{path}: metadata CSV needs columns {sorted(required)}")
    metas = []
    for _, row in df.iterrows():
        freq = str(row["frequency"]).lower()
        if freq not in FREQUENCY_M:
            raise DataError(f"{path}: unknown frequency '{freq}' for {row['series_id']}")
        metas.append(SeriesMeta(str(row["series_id"]), str(row["panel_id"]),
                                freq, int(row["tcode"])))
    return metas


def load_target_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, parse_dates=["date"])
    if not {"date", "value"} <= set(df.columns):
        raise DataError(f"{path}: target CSV needs columns ['date', 'value']")
    if "vintage_date" in df.columns:
        df["vintage_date"] = pd.to_datetime(df["vintage_date"])
    df["value"] = pd.to_numeric(df["value"], errors="coerce")
    return df
