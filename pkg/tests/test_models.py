import numpy as np
import pandas as pd
import pytest

from mfnowcast import (
    CvPlan,
    HighFrequencyPanel,
    LagLeadSpec,
    ModelConfig,
    ModelKind,
    PenaltySpec,
    TargetSeries,
    assemble_design,
    blocked_cv_tune,
    fit_model,
    predict_one,
)
from mfnowcast.errors import RaggedEdgeError, SpanError
from mfnowcast.models import PanelRole, contiguous_folds, default_penalty_grid
from mfnowcast.solvers import mu_max

CAL = pd.period_range("2000Q1", periods=44, freq="Q")


def make_setup(seed=0, n_series=6, t=44, ar=(0.4,), noise=0.3, m=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_series, t, m))
    y = np.zeros(t)
    for i in range(1, t):
        # signal: first series' previous-quarter average
        y[i] = 0.2 + sum(a * y[i - 1 - k] for k, a in enumerate(ar) if i - 1 - k >= 0) \
            + 0.8 * x[0, i - 1].mean() + noise * rng.standard_normal()
    target = TargetSeries(pd.Series(y, index=CAL[:t]))
    panel = HighFrequencyPanel(panel_id="macro", series_keys=[f"s{i}" for i in range(n_series)],
                               values=x, target_calendar=CAL[:t])
    return target, {"macro": panel}


def config_for(kind, **kw):
    defaults = dict(kind=kind, ar_lags=4, degree=3,
                    lag_specs={"macro": LagLeadSpec(m=3, q=1, leads=0)},
                    cv=CvPlan(folds=5))
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestAssembleDesign:
    def test_ar_columns(self):
        target, panels = make_setup()
        cfg = config_for(ModelKind.AR)
        asm = assemble_design(cfg, target, {}, CAL[40], CAL)
        assert asm.design.n_cols == 5  # intercept + 4 AR lags
        assert not asm.design.penalize_mask.any()
        assert asm.design.groups == []

    def test_sg_lasso_midas_layout(self):
        target, panels = make_setup(n_series=6)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        # intercept + 4 AR + 6 series x (D+1) dictionary columns
        assert asm.design.n_cols == 5 + 6 * 4
        assert len(asm.design.groups) == 6
        assert all(len(g) == 4 for g in asm.design.groups)
        assert asm.design.penalize_mask.sum() == 24
        # penalized columns are scaled to unit variance
        pen = asm.design.X[:, asm.design.penalize_mask]
        np.testing.assert_allclose(pen.std(axis=0, ddof=1), 1.0, atol=1e-10)

    def test_umidas_singleton_groups_and_alpha(self):
        target, panels = make_setup()
        cfg = config_for(ModelKind.LASSO_UMIDAS)
        assert cfg.alpha == 1.0
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        # window of 3 raw lags per series, one singleton group each
        assert asm.design.penalize_mask.sum() == 6 * 3
        assert all(len(g) == 1 for g in asm.design.groups)

    def test_famidas_factor_columns(self):
        target, panels = make_setup()
        cfg = config_for(ModelKind.FAMIDAS, degree=2,
                         panel_roles={"macro": PanelRole("macro", rank=2)})
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        factor_cols = [r for r in asm.design.roles if r.kind == "factor"]
        assert len(factor_cols) == 2 * 3  # R * (D+1)
        assert not asm.design.penalize_mask.any()

    def test_sg_lasso_famidas_has_both_blocks(self):
        target, panels = make_setup()
        cfg = config_for(ModelKind.SG_LASSO_FAMIDAS, degree=2,
                         panel_roles={"macro": PanelRole("macro", rank=1)})
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        kinds = {r.kind for r in asm.design.roles}
        assert {"intercept", "ar_lag", "predictor", "factor"} <= kinds
        n_factor = sum(r.kind == "factor" for r in asm.design.roles)
        assert n_factor == 3  # rank 1 x (D+1)
        # factor columns are unpenalized
        for i, r in enumerate(asm.design.roles):
            if r.kind == "factor":
                assert not asm.design.penalize_mask[i]

    def test_short_span_raises(self):
        target, panels = make_setup(t=10)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS)
        with pytest.raises(SpanError):
            assemble_design(cfg, target, panels, CAL[6], CAL[:10])

    def test_ragged_origin_raises(self):
        target, panels = make_setup()
        panels["macro"].values[0, 40, 2] = np.nan  # origin quarter incomplete
        cfg = config_for(ModelKind.SG_LASSO_MIDAS,
                         lag_specs={"macro": LagLeadSpec(m=3, q=1, leads=3)})
        with pytest.raises(RaggedEdgeError):
            assemble_design(cfg, target, panels, CAL[40], CAL)

    def test_factor_loadings_ignore_post_training_data(self):
        target, panels = make_setup()
        cfg = config_for(ModelKind.FAMIDAS, degree=2,
                         panel_roles={"macro": PanelRole("macro", rank=1)})
        asm1 = assemble_design(cfg, target, panels, CAL[40], CAL)
        tampered = panels["macro"].values.copy()
        tampered[:, 41:, :] += 50.0  # after the origin: must not leak into training
        panels2 = {"macro": HighFrequencyPanel("macro", panels["macro"].series_keys,
                                               tampered, CAL)}
        asm2 = assemble_design(cfg, target, panels2, CAL[40], CAL)
        np.testing.assert_array_equal(asm1.design.X, asm2.design.X)


class TestFitAndPredict:
    def test_ar_recovers_coefficients(self):
        rng = np.random.default_rng(1)
        t = 400
        cal = pd.period_range("1950Q1", periods=t, freq="Q")
        y = np.zeros(t)
        for i in range(1, t):
            y[i] = 0.5 + 0.6 * y[i - 1] + 0.05 * rng.standard_normal()
        target = TargetSeries(pd.Series(y, index=cal))
        cfg = config_for(ModelKind.AR, ar_lags=1, lag_specs={})
        asm = assemble_design(cfg, target, {}, cal[-1], cal)
        fit = fit_model(cfg, asm)
        intercept, phi = fit.solution.coefficients
        assert phi == pytest.approx(0.6, abs=0.12)
        assert intercept == pytest.approx(0.5, abs=0.2)
        nowcast = predict_one(fit)
        assert nowcast == pytest.approx(intercept + phi * y[-2], abs=1e-10)

    def test_heavy_penalty_collapses_to_unpenalized_ar(self):
        target, panels = make_setup(seed=2)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        mm = mu_max(asm.design, cfg.alpha)
        fit = fit_model(cfg, asm, PenaltySpec("sparse_group", mu=2 * mm, alpha=cfg.alpha))
        pen = asm.design.penalize_mask
        np.testing.assert_allclose(fit.solution.coefficients[pen], 0.0, atol=1e-10)
        ar_cfg = config_for(ModelKind.AR)
        ar_fit = fit_model(ar_cfg, assemble_design(ar_cfg, target, {}, CAL[40], CAL))
        np.testing.assert_allclose(fit.solution.coefficients[~pen],
                                   ar_fit.solution.coefficients, atol=1e-4)

    def test_famidas_nests_ar(self):
        target, panels = make_setup(seed=3)
        ar_cfg = config_for(ModelKind.AR)
        fa_cfg = config_for(ModelKind.FAMIDAS, degree=2,
                            panel_roles={"macro": PanelRole("macro", rank=2)})
        ar_fit = fit_model(ar_cfg, assemble_design(ar_cfg, target, {}, CAL[40], CAL))
        fa_fit = fit_model(fa_cfg, assemble_design(fa_cfg, target, panels, CAL[40], CAL))
        # the factor-augmented training SSE cannot exceed the nested AR SSE
        assert fa_fit.solution.objective <= ar_fit.solution.objective + 1e-10

    def test_coefficient_table_destandardizes(self):
        target, panels = make_setup(seed=4)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        fit = fit_model(cfg, asm, PenaltySpec("sparse_group", mu=0.01, alpha=0.5))
        table = fit.coefficient_table()
        assert set(table["role"]) >= {"intercept", "ar_lag", "predictor"}
        raw = fit.solution.coefficients / asm.design.column_scales
        np.testing.assert_allclose(table["value"].to_numpy(), raw)


class TestCv:
    def test_contiguous_fold_shapes(self):
        folds = contiguous_folds(10, 5)
        assert [len(f) for f in folds] == [2] * 5
        np.testing.assert_array_equal(np.concatenate(folds), np.arange(10))
        folds = contiguous_folds(11, 3)
        assert sum(len(f) for f in folds) == 11
        assert all(np.all(np.diff(f) == 1) for f in folds)

    def test_default_grid_spans_mu_max(self):
        target, panels = make_setup(seed=5)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS, mu_grid_size=10)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        grid = default_penalty_grid(cfg, asm.design)
        assert len(grid) == 10
        mm = mu_max(asm.design, cfg.alpha)
        assert grid[0].mu == pytest.approx(mm)
        assert grid[-1].mu == pytest.approx(mm * cfg.mu_grid_min_ratio)
        assert all(a.mu > b.mu for a, b in zip(grid, grid[1:]))

    def test_lava_grid_is_cross_product(self):
        target, panels = make_setup(seed=6)
        cfg = config_for(ModelKind.SG_LAVA_MIDAS, mu_grid_size=4, mu2_grid_size=3)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        grid = default_penalty_grid(cfg, asm.design)
        assert len(grid) == 12
        assert all(g.kind == "lava" and g.mu1 > 0 and g.mu2 > 0 for g in grid)

    def test_tie_break_prefers_smaller_penalty(self):
        target, panels = make_setup(seed=7)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        mm = mu_max(asm.design, cfg.alpha)
        # both penalties zero out every predictor -> identical CV scores
        grid = [PenaltySpec("sparse_group", mu=100 * mm, alpha=0.5),
                PenaltySpec("sparse_group", mu=50 * mm, alpha=0.5)]
        chosen = blocked_cv_tune(cfg, asm.design, grid)
        assert chosen.mu == pytest.approx(50 * mm)

    def test_deterministic(self):
        target, panels = make_setup(seed=8)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS, mu_grid_size=8)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        a = blocked_cv_tune(cfg, asm.design)
        b = blocked_cv_tune(cfg, asm.design)
        assert a == b

    def test_informative_signal_not_fully_shrunk(self):
        target, panels = make_setup(seed=9, noise=0.05)
        cfg = config_for(ModelKind.SG_LASSO_MIDAS, mu_grid_size=15)
        asm = assemble_design(cfg, target, panels, CAL[40], CAL)
        pen = blocked_cv_tune(cfg, asm.design)
        mm = mu_max(asm.design, cfg.alpha)
        assert pen.mu < mm  # some predictor signal survives CV

    def test_ar_grid_is_trivial(self):
        target, _ = make_setup(seed=10)
        cfg = config_for(ModelKind.AR)
        asm = assemble_design(cfg, target, {}, CAL[40], CAL)
        grid = default_penalty_grid(cfg, asm.design)
        assert len(grid) == 1 and grid[0].kind == "none"
