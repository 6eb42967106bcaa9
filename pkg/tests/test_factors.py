import numpy as np
import pandas as pd
import pytest

from mfnowcast import (
    CompletionConfig,
    HighFrequencyPanel,
    LagLeadSpec,
    LegendreBasis,
    RawSeries,
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
from mfnowcast.errors import DegenerateColumnError, RankDeficiencyError
from mfnowcast.factors import default_kmax, soft_impute_objective
from mfnowcast.panel import Frequency


class TestStandardize:
    def test_two_point_hand_values(self):
        out = standardize(np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(out.matrix[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])
        assert out.column_means[0] == pytest.approx(2.0)
        assert out.column_sds[0] == pytest.approx(np.sqrt(2))

    def test_moments(self):
        rng = np.random.default_rng(0)
        out = standardize(rng.standard_normal((50, 4)) * 3 + 1)
        np.testing.assert_allclose(out.matrix.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.matrix.std(axis=0, ddof=1), 1.0, atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((30, 3))
        once = standardize(x).matrix
        twice = standardize(once).matrix
        np.testing.assert_allclose(once, twice, atol=1e-12)

    def test_constant_column_names_series(self):
        x = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        with pytest.raises(DegenerateColumnError, match="flat"):
            standardize(x, series_keys=["ok", "flat"])


class TestSoftImpute:
    def rank_one(self, rng, rows=20, cols=8):
        return np.outer(rng.standard_normal(rows), rng.standard_normal(cols))

    def test_no_missing_passthrough(self):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((6, 4))
        completed, low_rank, _ = soft_impute(m, CompletionConfig())
        np.testing.assert_array_equal(completed, m)
        np.testing.assert_array_equal(low_rank, m)

    def test_lambda_at_or_above_lambda_zero_gives_zero(self):
        rng = np.random.default_rng(3)
        m = self.rank_one(rng)
        m[rng.random(m.shape) < 0.2] = np.nan
        lam0 = lambda_zero(m)
        for lam in (lam0, 2 * lam0):
            _, low_rank, _ = soft_impute(m, CompletionConfig(), lam=lam)
            np.testing.assert_allclose(low_rank, 0.0, atol=1e-10)

    def test_objective_monotone(self):
        rng = np.random.default_rng(4)
        m = self.rank_one(rng) + 0.05 * rng.standard_normal((20, 8))
        m[rng.random(m.shape) < 0.25] = np.nan
        _, _, trace = soft_impute(m, CompletionConfig(), lam=0.3 * lambda_zero(m),
                                  collect_objective=True)
        assert len(trace) >= 2
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))

    def test_rank_one_recovery(self):
        rng = np.random.default_rng(5)
        truth = self.rank_one(rng, rows=40, cols=12)
        m = truth.copy()
        mask = rng.random(m.shape) < 0.2
        m[mask] = np.nan
        completed, _, _ = soft_impute(m, CompletionConfig(max_rank=3, max_iterations=5000,
                                                          tolerance=1e-8),
                                      lam=1e-2 * lambda_zero(m))
        err = np.sqrt(np.mean((completed[mask] - truth[mask]) ** 2))
        scale = np.sqrt(np.mean(truth[mask] ** 2))
        assert err / scale < 0.05

    def test_fixed_point_objective(self):
        # completed solution is consistent: observed entries are untouched
        rng = np.random.default_rng(6)
        m = self.rank_one(rng)
        mask = rng.random(m.shape) < 0.3
        m[mask] = np.nan
        obs = ~np.isnan(m)
        completed, low_rank, _ = soft_impute(m, CompletionConfig(), lam=0.2 * lambda_zero(m))
        np.testing.assert_array_equal(completed[obs], m[obs])
        np.testing.assert_allclose(completed[~obs], low_rank[~obs])
        assert np.isfinite(soft_impute_objective(m, obs, low_rank, 1.0))

    def test_path_recovers_masked_entries(self):
        rng = np.random.default_rng(7)
        truth = (np.outer(rng.standard_normal(50), rng.standard_normal(15))
                 + np.outer(rng.standard_normal(50), rng.standard_normal(15)))
        m = truth.copy()
        mask = rng.random(m.shape) < 0.2
        m[mask] = np.nan
        completed, low_rank, lam = soft_impute_path(m, CompletionConfig(max_rank=6))
        assert 0 < lam < lambda_zero(m)
        err = np.sqrt(np.mean((completed[mask] - truth[mask]) ** 2))
        assert err / np.sqrt(np.mean(truth[mask] ** 2)) < 0.1


class TestCompletePanel:
    def make_panel(self, values):
        k, t, m = values.shape
        cal = pd.period_range("2000Q1", periods=t, freq="Q")
        return HighFrequencyPanel(panel_id="p", series_keys=[f"s{i}" for i in range(k)],
                                  values=values, target_calendar=cal)

    def test_balanced_passthrough(self):
        rng = np.random.default_rng(8)
        panel = self.make_panel(rng.standard_normal((3, 6, 3)))
        assert complete_panel(panel) is panel

    def test_fills_interior_gaps(self):
        rng = np.random.default_rng(9)
        common = rng.standard_normal(8 * 3)
        vals = np.stack([np.outer(common, 1.0).reshape(8, 3) * w
                         + 0.01 * rng.standard_normal((8, 3)) for w in (1.0, -0.5, 2.0, 0.7)])
        truth = vals[1, 4, 1]
        vals[1, 4, 1] = np.nan
        out = complete_panel(self.make_panel(vals))
        assert not np.isnan(out.values).any()
        assert out.values[1, 4, 1] == pytest.approx(truth, abs=0.3)
        # observed cells untouched
        obs = ~np.isnan(vals)
        np.testing.assert_array_equal(out.values[obs], vals[obs])


class TestPca:
    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(10)
        std = standardize(rng.standard_normal((40, 5)))
        fit = pca_extract(std, rank=5)
        np.testing.assert_allclose(fit.factor_scores @ fit.loadings.T, std.matrix,
                                   atol=1e-10)

    def test_loadings_normalization(self):
        rng = np.random.default_rng(11)
        std = standardize(rng.standard_normal((60, 6)))
        fit = pca_extract(std, rank=3)
        np.testing.assert_allclose(fit.loadings.T @ fit.loadings / 6, np.eye(3), atol=1e-10)

    def test_sign_determinism(self):
        rng = np.random.default_rng(12)
        std = standardize(rng.standard_normal((30, 4)))
        a = pca_extract(std, rank=2)
        b = pca_extract(std, rank=2)
        np.testing.assert_array_equal(a.loadings, b.loadings)
        for r in range(2):
            j = int(np.argmax(np.abs(a.loadings[:, r])))
            assert a.loadings[j, r] > 0

    def test_rank_too_large(self):
        std = standardize(np.random.default_rng(13).standard_normal((10, 3)))
        with pytest.raises(RankDeficiencyError):
            pca_extract(std, rank=4)

    def test_recovers_factor_space(self):
        rng = np.random.default_rng(14)
        f = rng.standard_normal((200, 2))
        lam = rng.standard_normal((20, 2))
        x = f @ lam.T + 0.1 * rng.standard_normal((200, 20))
        fit = pca_extract(standardize(x), rank=2)
        # each true factor is well explained by the fitted score pair
        q, _ = np.linalg.qr(fit.factor_scores - fit.factor_scores.mean(axis=0))
        for r in range(2):
            fr = f[:, r] - f[:, r].mean()
            r2 = np.linalg.norm(q.T @ fr) ** 2 / np.linalg.norm(fr) ** 2
            assert r2 > 0.95


class TestRankSelection:
    def test_growth_ratio_hand_example(self):
        sel = growth_ratio_select([100, 50, 1, 0.5, 0.25, 0.125], kmax=3)
        assert sel.selected == 2

    def test_growth_ratio_short_spectrum(self):
        sel = growth_ratio_select([100, 50, 1, 0.5], kmax=2)
        assert sel.selected == 2

    def test_growth_ratio_scale_invariant(self):
        mu = np.array([100, 50, 1, 0.5, 0.25, 0.125])
        for c in (1e-6, 1.0, 1e6):
            assert growth_ratio_select(c * mu, kmax=3).selected == 2

    def test_eigenvalue_ratio_hand_example(self):
        assert eigenvalue_ratio_select([100, 50, 1, 0.5], kmax=2).selected == 2

    def test_eigenvalue_ratio_tie_takes_smallest(self):
        assert eigenvalue_ratio_select([9, 3, 1], kmax=2).selected == 1

    def test_descending_required(self):
        with pytest.raises(ValueError):
            growth_ratio_select([1, 2, 3, 4, 5], kmax=2)

    def test_default_kmax(self):
        assert default_kmax(400, 50) == 8
        assert default_kmax(400, 6) == 3
        assert default_kmax(5, 50) == 2
        assert default_kmax(2, 2) == 1


class TestExtractPanelFactors:
    def tensor(self, seed=15, k=12, c=4, t=30, r=2, noise=0.2):
        from mfnowcast.basis import AggregatedTensor

        rng = np.random.default_rng(seed)
        f = rng.standard_normal((r, c, t))
        lam = rng.standard_normal((k, r))
        vals = np.einsum("kr,rct->kct", lam, f) + noise * rng.standard_normal((k, c, t))
        return AggregatedTensor(values=vals, period_index=np.arange(t),
                                spec=LagLeadSpec(m=3, q=1, leads=0),
                                basis=LegendreBasis(1),
                                series_keys=[f"s{i}" for i in range(k)])

    def test_fixed_rank_shapes(self):
        tensor = self.tensor()
        pf = extract_panel_factors(tensor, rank=2, panel_id="p")
        assert pf.tensor_values.shape == (2, 4, 30)
        assert pf.selection.method == "fixed"
        np.testing.assert_array_equal(pf.period_index, tensor.period_index)

    def test_automatic_rank_finds_truth(self):
        pf = extract_panel_factors(self.tensor(seed=16, noise=0.1), method="growth_ratio")
        assert pf.selection.selected == 2

    def test_scores_match_pca_layout(self):
        tensor = self.tensor()
        pf = extract_panel_factors(tensor, rank=1)
        stacked = tensor.values.reshape(len(tensor.series_keys), -1).T
        fit = pca_extract(standardize(stacked), rank=1)
        np.testing.assert_allclose(pf.tensor_values.reshape(1, -1),
                                   fit.factor_scores.T, atol=1e-12)


class TestIngestExternalFactor:
    def test_quarterly_indicator(self):
        idx = pd.date_range("2000-03-31", periods=8, freq="QE")
        series = RawSeries("adsi", pd.Series(np.arange(8.0) + 1, index=idx), Frequency(1))
        out = ingest_external_factor(series, LagLeadSpec(m=1, q=1, leads=0), LegendreBasis(0))
        # single dictionary column: previous quarter's value
        np.testing.assert_allclose(out.values[0, 0], np.arange(7.0) + 1)

    def test_frequency_mismatch(self):
        idx = pd.date_range("2000-03-31", periods=8, freq="QE")
        series = RawSeries("adsi", pd.Series(np.arange(8.0), index=idx), Frequency(1))
        with pytest.raises(ValueError, match="adsi"):
            ingest_external_factor(series, LagLeadSpec(m=3, q=1, leads=0), LegendreBasis(0))
