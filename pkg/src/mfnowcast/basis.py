"""Legendre weight dictionary and the MIDAS aggregation map.

High-frequency lags (and leads into the current target period) are collapsed
into low-frequency regressors by weighting each lag with an orthonormal
shifted-Legendre polynomial evaluated on the lag window rescaled to [0, 1].
The unrestricted (UMIDAS) expansion keeps one column per high-frequency lag
instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

from .errors import RaggedEdgeError


@dataclass(frozen=True)
class LegendreBasis:
    """Orthonormal shifted Legendre family w_0..w_degree on [0, 1].

    w_d(s) = sqrt(2d + 1) * P_d(2s - 1), so that the family is orthonormal
    in L2[0, 1].
    """

    degree: int = 3

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")

    @property
    def size(self) -> int:
        return self.degree + 1

    def eval_all(self, s) -> np.ndarray:
        """Evaluate w_0..w_degree at points s in [0, 1].

        Returns an array of shape (len(s), degree + 1).
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < -1e-12) or np.any(s > 1 + 1e-12):
            raise ValueError(f"basis argument outside [0, 1]: {s.min()}..{s.max()}")
        x = 2.0 * s - 1.0
        cols = []
        for d in range(self.degree + 1):
            coef = np.zeros(d + 1)
            coef[d] = 1.0
            cols.append(np.sqrt(2 * d + 1) * npleg.legval(x, coef))
        return np.stack(cols, axis=1)


def basis_eval(basis: LegendreBasis, d: int, s: float) -> float:
    """Evaluate the d-th orthonormal shifted Legendre polynomial at s."""
    if not 0 <= d <= basis.degree:
        raise ValueError(f"degree index {d} outside 0..{basis.degree}")
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"basis argument {s} outside [0, 1]")
    return float(basis.eval_all([s])[0, d])


def weight_curve(coeffs, basis: LegendreBasis, grid) -> np.ndarray:
    """Weight function omega(s) = sum_d coeffs[d] * w_d(s) on the grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients, got {coeffs.shape}")
    return basis.eval_all(grid) @ coeffs


@dataclass(frozen=True)
class LagLeadSpec:
    """Lag/lead window for one panel.

    m: high-frequency observations per target period; q: low-frequency lags;
    leads: high-frequency observations used from inside the current target
    period (0 <= leads <= m).
    """

    m: int
    q: int = 1
    leads: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.q < 0:
            raise ValueError("q must be >= 0")
        if not 0 <= self.leads <= self.m:
            raise ValueError("leads must satisfy 0 <= leads <= m")
        if self.window_length < 1:
            raise ValueError("window m*q + leads must be >= 1")

    @property
    def window_length(self) -> int:
        return self.m * self.q + self.leads

    def window_indices(self):
        """High-frequency window index j, from 1 - leads up to m * q."""
        return range(1 - self.leads, self.m * self.q + 1)

    def eval_points(self) -> np.ndarray:
        """Rescaled basis arguments for each j, all inside [0, 1).

        The raw argument (j - 1 + leads) / m spans [0, q + (leads - 1) / m];
        dividing by the window length in target-period units, q + leads / m,
        keeps the points in [0, 1) for any admissible leads (and is the plain
        division by q whenever leads = 0).
        """
        j = np.array(list(self.window_indices()), dtype=float)
        return (j - 1 + self.leads) / self.window_length

    def slot_map(self):
        """Map each window index j to (target-period offset, intra-period slot).

        Offsets are relative to the target period t (0 = current period,
        -1 = previous, ...); slots are chronological, 1..m. Index j = 1 is the
        last slot of period t - 1; leads j <= 0 sit inside period t.
        """
        out = []
        for j in self.window_indices():
            if j >= 1:
                a = j - 1
                out.append((-1 - a // self.m, self.m - a % self.m))
            else:
                out.append((0, 1 - j))
        return out


@dataclass
class AggregatedTensor:
    """MIDAS-weighted regressors, indexed (series, dictionary column, period).

    values has shape (K, n_columns, n_periods); period_index holds the
    positions of the admissible target periods within the source calendar.
    """

    values: np.ndarray
    period_index: np.ndarray
    spec: LagLeadSpec
    basis: LegendreBasis | None = None
    series_keys: list = field(default_factory=list)

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return self.values.shape[1]


def _gather_window(panel_values: np.ndarray, spec: LagLeadSpec, min_period: int = 0):
    """Collect the (K, window, T_adm) lag stack for every admissible period.

    panel_values: array (K, T, m), NaN marking missing entries. A period t is
    admissible when every window entry exists inside the calendar and none is
    NaN. Returns (stack, period_positions).
    """
    n_series, n_periods, m = panel_values.shape
    if m != spec.m:
        raise ValueError(f"panel frequency {m} does not match spec m={spec.m}")
    slots = spec.slot_map()
    earliest = -min(off for off, _ in slots) if slots else 0
    t_positions = []
    columns = []
    for t in range(max(earliest, min_period), n_periods):
        gathered = np.empty((n_series, len(slots)))
        ok = True
        for w, (off, slot) in enumerate(slots):
            tp = t + off
            if tp < 0 or tp >= n_periods:
                ok = False
                break
            gathered[:, w] = panel_values[:, tp, slot - 1]
        if not ok or np.isnan(gathered).any():
            continue
        t_positions.append(t)
        columns.append(gathered)
    if not t_positions:
        stack = np.empty((n_series, len(slots), 0))
    else:
        stack = np.stack(columns, axis=2)
    return stack, np.array(t_positions, dtype=int)


def missing_window_entries(panel_values: np.ndarray, spec: LagLeadSpec, t: int):
    """Report (window j, period offset, slot) triples missing for period t."""
    out = []
    n_periods = panel_values.shape[1]
    for j, (off, slot) in zip(spec.window_indices(), spec.slot_map()):
        tp = t + off
        if tp < 0 or tp >= n_periods or np.isnan(panel_values[:, tp, slot - 1]).any():
            out.append((j, off, slot))
    return out


def aggregate(panel, spec: LagLeadSpec, basis: LegendreBasis,
              require_period: int | None = None) -> AggregatedTensor:
    """MIDAS aggregation X[k, d, t] = sum_j w_d(s_j) * lag stack.

    panel is a HighFrequencyPanel (or anything with .values (K, T, m) and
    .series_keys). If require_period is given, that period position must be
    admissible, otherwise a RaggedEdgeError names the gap.
    """
    stack, positions = _gather_window(panel.values, spec)
    if require_period is not None and require_period not in positions:
        gaps = missing_window_entries(panel.values, spec, require_period)
        raise RaggedEdgeError(
            f"panel {getattr(panel, 'panel_id', '?')}: period position "
            f"{require_period} not admissible; missing window entries {gaps[:5]}"
        )
    weights = basis.eval_all(spec.eval_points())  # (window, D+1)
    values = np.einsum("kwt,wd->kdt", stack, weights)
    return AggregatedTensor(
        values=values, period_index=positions, spec=spec, basis=basis,
        series_keys=list(getattr(panel, "series_keys", [])),
    )


def umidas_expand(panel, spec: LagLeadSpec,
                  require_period: int | None = None) -> AggregatedTensor:
    """Unrestricted expansion: one column per high-frequency lag/lead.

    Columns are ordered by window index j ascending (most recent lead first,
    deepest lag last); count per series = m * q + leads.
    """
    stack, positions = _gather_window(panel.values, spec)
    if require_period is not None and require_period not in positions:
        gaps = missing_window_entries(panel.values, spec, require_period)
        raise RaggedEdgeError(
            f"panel {getattr(panel, 'panel_id', '?')}: period position "
            f"{require_period} not admissible; missing window entries {gaps[:5]}"
        )
    return AggregatedTensor(
        values=stack.copy(), period_index=positions, spec=spec, basis=None,
        series_keys=list(getattr(panel, "series_keys", [])),
    )
