"""Convex solvers for the penalized regression problems.

All estimators minimize (1/T) * ||y - X c||^2 plus a penalty on the flagged
columns: sparse-group (l1 + group-l2 mix) via monotone FISTA with adaptive
restart, ridge via the normal equations, and the sparse-plus-dense
decomposition via block alternation between an sg-LASSO step and a
closed-form ridge step.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficiencyError


@dataclass(frozen=True)
class ColumnRole:
    kind: str               # 'intercept' | 'ar_lag' | 'predictor' | 'factor'
    panel: str = ""
    series: str = ""
    index: int = 0          # lag index / dictionary column / factor number


@dataclass
class DesignAssembly:
    """Assembled regression problem.

    groups partitions the penalized columns (one group per original series);
    dense_mask marks the penalized columns eligible for the dense part of the
    sparse-plus-dense decomposition (defaults to all penalized columns).
    """

    y: np.ndarray
    X: np.ndarray
    roles: list[ColumnRole]
    groups: list[np.ndarray]
    penalize_mask: np.ndarray
    dense_mask: np.ndarray | None = None
    column_scales: np.ndarray | None = None
    periods: object = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        t, p = self.X.shape
        if self.y.shape != (t,):
            raise ValueError("response length does not match design rows")
        if len(self.roles) != p or self.penalize_mask.shape != (p,):
            raise ValueError("roles / penalize_mask inconsistent with design columns")
        counted = np.zeros(p, dtype=int)
        for g in self.groups:
            counted[np.asarray(g)] += 1
        if not np.array_equal(counted.astype(bool), self.penalize_mask):
            raise ValueError("groups must partition exactly the penalized columns")
        if counted.max(initial=0) > 1:
            raise ValueError("a column may belong to at most one group")
        if self.dense_mask is None:
            self.dense_mask = self.penalize_mask.copy()
        if self.column_scales is None:
            self.column_scales = np.ones(p)
        # flat group indexing for vectorized prox / penalty / KKT evaluation
        if self.groups:
            self._gidx = np.concatenate([np.asarray(g, dtype=int) for g in self.groups])
            self._gsizes = np.array([len(g) for g in self.groups], dtype=int)
        else:
            self._gidx = np.empty(0, dtype=int)
            self._gsizes = np.empty(0, dtype=int)
        self._goffsets = np.concatenate([[0], np.cumsum(self._gsizes)])

    def group_norms(self, values: np.ndarray) -> np.ndarray:
        """Per-group l2 norms of `values` restricted to the grouped columns."""
        if not len(self._gidx):
            return np.empty(0)
        sq = values[self._gidx] ** 2
        return np.sqrt(np.add.reduceat(sq, self._goffsets[:-1]))

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]

    @property
    def n_cols(self) -> int:
        return self.X.shape[1]


@dataclass
class PenaltySpec:
    kind: str                      # 'none' | 'l1' | 'group' | 'sparse_group' | 'ridge' | 'lava'
    mu: float = 0.0
    alpha: float | None = None     # sparse-group mixing
    mu1: float | None = None       # lava sparse level
    mu2: float | None = None       # lava dense level

    def effective_alpha(self) -> float:
        if self.kind == "l1":
            return 1.0
        if self.kind == "group":
            return 0.0
        if self.alpha is None:
            raise ValueError(f"penalty kind '{self.kind}' requires alpha")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return self.alpha


@dataclass
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 10000

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class Solution:
    coefficients: np.ndarray
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    sparse_part: np.ndarray | None = None  # lava only, over penalized columns
    dense_part: np.ndarray | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else np.nan


def prox_l1(v: np.ndarray, threshold: float) -> np.ndarray:
    """Elementwise soft threshold."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def prox_group(v: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft threshold: scale the whole vector toward zero."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= threshold:
        return np.zeros_like(v)
    return v * (1.0 - threshold / norm)


def prox_sparse_group(v: np.ndarray, mu: float, alpha: float) -> np.ndarray:
    """Exact prox of mu * (alpha * |.|_1 + (1 - alpha) * ||.||_2) on one group."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return prox_group(prox_l1(v, alpha * mu), (1.0 - alpha) * mu)


def sparse_group_penalty(coefs: np.ndarray, groups, mu: float, alpha: float) -> float:
    total = 0.0
    for g in groups:
        block = coefs[g]
        total += alpha * np.abs(block).sum() + (1 - alpha) * np.linalg.norm(block)
    return mu * total


def _apply_group_prox(coefs: np.ndarray, design: DesignAssembly,
                      threshold: float, alpha: float) -> np.ndarray:
    """Vectorized sparse-group prox over every penalized group at once."""
    out = coefs.copy()
    idx = design._gidx
    if not len(idx):
        return out
    w = prox_l1(coefs[idx], alpha * threshold)
    norms = np.sqrt(np.add.reduceat(w * w, design._goffsets[:-1]))
    thr = (1.0 - alpha) * threshold
    scale = np.where(norms > thr, 1.0 - thr / np.maximum(norms, 1e-300), 0.0)
    out[idx] = w * np.repeat(scale, design._gsizes)
    return out


def _design_penalty(design: DesignAssembly, coefs: np.ndarray,
                    mu: float, alpha: float) -> float:
    idx = design._gidx
    if not len(idx):
        return 0.0
    block = coefs[idx]
    return mu * (alpha * float(np.abs(block).sum())
                 + (1.0 - alpha) * float(design.group_norms(coefs).sum()))


def _objective(design: DesignAssembly, coefs: np.ndarray, mu: float, alpha: float) -> float:
    resid = design.y - design.X @ coefs
    return float(resid @ resid) / design.n_obs + _design_penalty(design, coefs, mu, alpha)


def fit_proximal(design: DesignAssembly, penalty: PenaltySpec,
                 opts: SolverOptions | None = None,
                 warm_start: np.ndarray | None = None) -> Solution:
    """Monotone FISTA with gradient-based adaptive restart and backtracking.

    The group-separable prox touches only penalized columns; unpenalized
    columns follow plain gradient steps. Non-convergence is reported through
    the converged flag, never raised.
    """
    opts = opts or SolverOptions()
    alpha = penalty.effective_alpha()
    mu = penalty.mu
    y, X, T = design.y, design.X, design.n_obs

    def smooth(c):
        r = y - X @ c
        return float(r @ r) / T

    def grad(c):
        return (2.0 / T) * (X.T @ (X @ c - y))

    lip = 2.0 * np.linalg.norm(X, 2) ** 2 / T
    step = 1.0 / max(lip, 1e-12)
    kkt_tol = 100.0 * opts.tolerance * (1.0 + float(np.linalg.norm(y)))
    x = np.zeros(design.n_cols) if warm_start is None else warm_start.astype(float).copy()
    z = x.copy()
    t_mom = 1.0
    f_x = _objective(design, x, mu, alpha)
    trace = [f_x]
    converged = False
    it = 0
    for it in range(1, opts.max_iterations + 1):
        g = grad(z)
        f_z = smooth(z)
        while True:
            cand = z - step * g
            cand = _apply_group_prox(cand, design, step * mu, alpha)
            diff = cand - z
            if smooth(cand) <= f_z + g @ diff + (diff @ diff) / (2 * step) + 1e-12:
                break
            step *= 0.5
            if step < 1e-18:
                break
        f_cand = _objective(design, cand, mu, alpha)
        if f_cand <= f_x:
            x_new = cand
            f_new = f_cand
        else:  # monotone safeguard: keep the best iterate
            x_new = x
            f_new = f_x
        restart = (z - cand) @ (cand - x) > 0
        t_new = 1.0 if restart else (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2)) / 2.0
        z = cand + ((t_mom - 1.0) / t_new) * (cand - x) if not restart else x_new.copy()
        t_mom = t_new
        rel_change = abs(f_x - f_new) / max(abs(f_x), 1e-12)
        moved = np.linalg.norm(cand - x) / max(np.linalg.norm(x), 1.0)
        x, f_x = x_new, f_new
        trace.append(f_x)
        if rel_change < opts.tolerance and moved < np.sqrt(opts.tolerance) \
                and kkt_residual(design, x, mu, alpha) <= kkt_tol:
            converged = True
            break
    return Solution(coefficients=x, objective_trace=trace, iterations=it, converged=converged)


def kkt_residual(design: DesignAssembly, coefs: np.ndarray, mu: float, alpha: float) -> float:
    """Norm of the minimal subgradient of the sg-LASSO objective at coefs."""
    g = (2.0 / design.n_obs) * (design.X.T @ (design.X @ coefs - design.y))
    res = np.where(design.penalize_mask, 0.0, g).astype(float)
    idx = design._gidx
    if not len(idx):
        return float(np.linalg.norm(res))
    block = coefs[idx]
    gb = g[idx]
    sizes = design._gsizes
    offsets = design._goffsets[:-1]
    norms = np.sqrt(np.add.reduceat(block * block, offsets))
    live = np.repeat(norms > 0, sizes)
    # groups away from the origin: gradient plus the (unique) penalty subgradient,
    # with the zero coordinates soft-thresholded by the l1 weight
    rep_norm = np.repeat(np.maximum(norms, 1e-300), sizes)
    r_live = gb + mu * (1 - alpha) * block / rep_norm
    active = block != 0
    r_live = np.where(active, r_live + mu * alpha * np.sign(block),
                      np.sign(r_live) * np.maximum(np.abs(r_live) - mu * alpha, 0.0))
    # groups at the origin: distance of the soft-thresholded gradient to the
    # group-penalty ball
    shrunk = np.sign(gb) * np.maximum(np.abs(gb) - mu * alpha, 0.0)
    snorm = np.sqrt(np.add.reduceat(shrunk * shrunk, offsets))
    excess = np.maximum(snorm - mu * (1 - alpha), 0.0)
    factor = np.where(snorm > 0, excess / np.maximum(snorm, 1e-300), 0.0)
    r_zero = shrunk * np.repeat(factor, sizes)
    res[idx] = np.where(live, r_live, r_zero)
    return float(np.linalg.norm(res))


def mu_max(design: DesignAssembly, alpha: float) -> float:
    """Smallest penalty zeroing every penalized column (KKT at the null model)."""
    unpen = np.flatnonzero(~design.penalize_mask)
    if len(unpen):
        base, *_ = np.linalg.lstsq(design.X[:, unpen], design.y, rcond=None)
        resid = design.y - design.X[:, unpen] @ base
    else:
        resid = design.y
    g = (2.0 / design.n_obs) * (design.X.T @ resid)
    out = 0.0
    for grp in design.groups:
        gb = np.abs(g[grp])
        if alpha >= 1.0:
            out = max(out, gb.max(initial=0.0))
            continue
        hi = gb.max(initial=0.0) / alpha if alpha > 0 else np.linalg.norm(gb) / (1 - alpha)
        lo = 0.0
        for _ in range(80):  # h(mu) = ||soft(g, mu*alpha)|| - mu*(1-alpha), decreasing
            mid = (lo + hi) / 2
            h = np.linalg.norm(np.maximum(gb - mid * alpha, 0.0)) - mid * (1 - alpha)
            if h > 0:
                lo = mid
            else:
                hi = mid
        out = max(out, hi)
    return out


def ridge_fit(design: DesignAssembly, mu: float) -> Solution:
    """Closed-form (X'X / T + mu * M) c = X'y / T with M the penalize mask."""
    if mu < 0:
        raise ValueError("mu must be >= 0")
    T = design.n_obs
    a = design.X.T @ design.X / T + mu * np.diag(design.penalize_mask.astype(float))
    b = design.X.T @ design.y / T
    if mu == 0.0 and np.linalg.matrix_rank(design.X) < design.n_cols:
        raise RankDeficiencyError("ridge with mu=0 needs a full-rank design")
    try:
        coefs = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"singular ridge system: {exc}") from exc
    resid = design.y - design.X @ coefs
    obj = float(resid @ resid) / T + mu * float(coefs[design.penalize_mask] @
                                                coefs[design.penalize_mask])
    return Solution(coefficients=coefs, objective_trace=[obj], iterations=1, converged=True)


def ols_fit(design: DesignAssembly) -> Solution:
    """Exact least squares; raises on rank deficiency naming the columns."""
    rank = np.linalg.matrix_rank(design.X)
    if rank < design.n_cols:
        _, r = np.linalg.qr(design.X)
        diag = np.abs(np.diag(r))
        bad = [design.roles[i] for i in np.flatnonzero(diag < 1e-10 * max(diag.max(), 1e-300))]
        raise RankDeficiencyError(f"rank-deficient design (rank {rank} of {design.n_cols}); "
                                  f"suspect columns: {bad[:5]}")
    coefs, *_ = np.linalg.lstsq(design.X, design.y, rcond=None)
    resid = design.y - design.X @ coefs
    return Solution(coefficients=coefs, objective_trace=[float(resid @ resid) / design.n_obs],
                    iterations=1, converged=True)


def _lava_objective(design: DesignAssembly, base: np.ndarray, zeta: np.ndarray,
                    eta: np.ndarray, mu1: float, mu2: float, alpha: float) -> float:
    pen_idx = np.flatnonzero(design.penalize_mask)
    coefs = base.copy()
    coefs[pen_idx] += zeta + eta
    resid = design.y - design.X @ coefs
    pen_groups = [np.searchsorted(pen_idx, g) for g in design.groups]
    return (float(resid @ resid) / design.n_obs
            + sparse_group_penalty(zeta, pen_groups, mu1, alpha)
            + mu2 * float(eta @ eta))


def lava_fit(design: DesignAssembly, mu1: float, mu2: float, alpha: float,
             opts: SolverOptions | None = None) -> Solution:
    """Sparse-plus-dense fit by block alternation.

    Given the sparse part, the dense part (plus unpenalized columns) solves a
    ridge problem in closed form; given the dense part, the sparse part solves
    an sg-LASSO via fit_proximal with warm starts. The joint objective is
    non-increasing at every half-step.
    """
    if mu1 <= 0 or mu2 <= 0:
        raise ValueError("lava requires mu1 > 0 and mu2 > 0")
    opts = opts or SolverOptions()
    pen_idx = np.flatnonzero(design.penalize_mask)
    dense_idx = np.flatnonzero(design.dense_mask)
    unpen_idx = np.flatnonzero(~design.penalize_mask)
    n_pen = len(pen_idx)
    dense_pos = np.searchsorted(pen_idx, dense_idx)

    # Ridge sub-design: unpenalized columns + dense columns, penalty on dense only.
    ridge_cols = np.concatenate([unpen_idx, dense_idx]).astype(int)
    ridge_design_X = design.X[:, ridge_cols]
    ridge_mask = np.concatenate([np.zeros(len(unpen_idx), bool), np.ones(len(dense_idx), bool)])
    T = design.n_obs
    a_mat = ridge_design_X.T @ ridge_design_X / T + mu2 * np.diag(ridge_mask.astype(float))

    # Sparse sub-design: unpenalized + all penalized columns, sg penalty.
    sparse_cols = np.concatenate([unpen_idx, pen_idx]).astype(int)
    sparse_roles = [design.roles[i] for i in sparse_cols]
    sparse_mask = np.concatenate([np.zeros(len(unpen_idx), bool), np.ones(n_pen, bool)])
    col_of = {c: i for i, c in enumerate(sparse_cols)}
    sparse_groups = [np.array([col_of[c] for c in g]) for g in design.groups]

    zeta = np.zeros(n_pen)
    eta = np.zeros(n_pen)
    base = np.zeros(design.n_cols)
    sparse_warm = None
    obj = _lava_objective(design, base, zeta, eta, mu1, mu2, alpha)
    trace = [obj]
    converged = False
    inner_opts = SolverOptions(tolerance=max(opts.tolerance * 1e-2, 1e-12),
                               max_iterations=opts.max_iterations)
    it = 0
    for it in range(1, 201):
        # Ridge half-step in (unpenalized, dense) given the sparse part.
        resp = design.y - design.X[:, pen_idx] @ zeta
        sol = np.linalg.solve(a_mat, ridge_design_X.T @ resp / T)
        base = np.zeros(design.n_cols)
        base[unpen_idx] = sol[: len(unpen_idx)]
        eta = np.zeros(n_pen)
        eta[dense_pos] = sol[len(unpen_idx):]
        # Sparse half-step in (unpenalized, sparse) given the dense part.
        resp = design.y - design.X[:, pen_idx] @ eta
        sub = DesignAssembly(y=resp, X=design.X[:, sparse_cols], roles=sparse_roles,
                             groups=sparse_groups, penalize_mask=sparse_mask)
        if sparse_warm is not None:
            sparse_warm[: len(unpen_idx)] = base[unpen_idx]
        inner = fit_proximal(sub, PenaltySpec(kind="sparse_group", mu=mu1, alpha=alpha),
                             inner_opts, warm_start=sparse_warm)
        sparse_warm = inner.coefficients.copy()
        base = np.zeros(design.n_cols)
        base[unpen_idx] = inner.coefficients[: len(unpen_idx)]
        zeta = inner.coefficients[len(unpen_idx):]
        new_obj = _lava_objective(design, base, zeta, eta, mu1, mu2, alpha)
        trace.append(new_obj)
        if abs(obj - new_obj) / max(abs(obj), 1e-12) < opts.tolerance:
            converged = True
            obj = new_obj
            break
        obj = new_obj
    coefs = base.copy()
    coefs[pen_idx] += zeta + eta
    return Solution(coefficients=coefs, objective_trace=trace, iterations=it,
                    converged=converged, sparse_part=zeta, dense_part=eta)
