import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nowcastbench.stats import (
    AdfConfig,
    _adf_design,
    _kendall_tau_b,
    adf_test,
    autocorrelation,
    correlation_matrix,
    fit_decay_lambda,
    mackinnon_pvalue,
    zero_inflation_ratio,
)


class TestZeroInflation:
    def test_counting(self):
        assert zero_inflation_ratio(np.array([0.0, 0.0, 1.0, 0.0])) == 0.75

    def test_all_zero(self):
        assert zero_inflation_ratio(np.zeros(100)) == 1.0

    def test_published_scale(self):
        tp = np.concatenate([np.zeros(43313), np.ones(52585 - 43313)])
        ratio = zero_inflation_ratio(tp)
        assert ratio == pytest.approx(43313 / 52585)
        assert round(100 * ratio, 1) == 82.4

    def test_exact_zero_only(self):
        # forward-filled zeros count; tiny drizzle does not
        assert zero_inflation_ratio(np.array([0.0, 1e-12, 0.0])) == pytest.approx(2 / 3)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            zero_inflation_ratio(np.array([]))


class TestAutocorrelation:
    def test_alternating_lag2(self):
        x = np.tile([1.0, -1.0], 500)
        assert autocorrelation(x, 2) == pytest.approx(1.0, abs=5e-3)

    def test_white_noise(self):
        x = np.random.default_rng(123).normal(size=100_000)
        assert abs(autocorrelation(x, 1)) < 0.01

    def test_ar1_theory(self):
        rng = np.random.default_rng(42)
        phi, n = 0.8, 100_000
        eps = rng.normal(size=n)
        x = np.empty(n)
        x[0] = eps[0]
        for t in range(1, n):
            x[t] = phi * x[t - 1] + eps[t]
        assert autocorrelation(x, 1) == pytest.approx(0.80, abs=0.01)

    def test_constant_series(self):
        with pytest.raises(ValueError, match="constant series"):
            autocorrelation(np.ones(50), 1)

    def test_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.normal(size=200) ** 3
            for k in (1, 3, 10):
                assert abs(autocorrelation(x, k)) <= 1 + 1e-9


class TestDecayFit:
    def test_exact_exponential(self):
        k = np.arange(1, 11)
        fit = fit_decay_lambda(np.exp(-0.5 * k))
        assert fit.lambda_hat == pytest.approx(0.5, abs=1e-12)
        assert fit.fit_r2 == pytest.approx(1.0, abs=1e-12)
        assert fit.excluded == 0

    def test_negative_point_excluded(self):
        rho = np.exp(-0.3 * np.arange(1, 11))
        rho[6] = -0.05
        fit = fit_decay_lambda(rho)
        assert fit.excluded == 1
        assert 7 not in fit.lags
        assert fit.lambda_hat == pytest.approx(0.3, abs=1e-9)

    def test_insufficient_points(self):
        with pytest.raises(ValueError, match="insufficient decay points"):
            fit_decay_lambda([0.5, -0.1, -0.2])


def ols_oracle_longdouble(design: np.ndarray, target: np.ndarray, index: int) -> float:
    """Brute-force OLS t-stat via normal equations at extended precision."""
    x = design.astype(np.longdouble)
    y = target.astype(np.longdouble)
    xtx = x.T @ x
    beta = np.linalg.solve(xtx.astype(np.float64), (x.T @ y).astype(np.float64))
    beta = beta.astype(np.longdouble)
    # one refinement step keeps the solve honest at extended precision
    residual_normal = x.T @ (y - x @ beta)
    beta = beta + np.linalg.solve(xtx.astype(np.float64),
                                  residual_normal.astype(np.float64)).astype(np.longdouble)
    resid = y - x @ beta
    n, k = x.shape
    sigma2 = (resid @ resid) / (n - k)
    cov = sigma2 * np.linalg.inv(xtx.astype(np.float64)).astype(np.longdouble)
    return float(beta[index] / np.sqrt(cov[index, index]))


class TestAdf:
    def test_random_walk_class(self):
        rng = np.random.default_rng(100)
        p_values = [adf_test(np.cumsum(rng.normal(size=500))).p_value for _ in range(10)]
        assert sum(p > 0.10 for p in p_values) >= 9

    def test_iid_noise_class(self):
        rng = np.random.default_rng(200)
        p_values = [adf_test(rng.normal(size=500)).p_value for _ in range(10)]
        assert all(p < 0.05 for p in p_values)

    def test_tstat_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(321)
        for _ in range(20):
            x = np.cumsum(rng.normal(size=200)) if rng.random() < 0.5 else rng.normal(size=200)
            result = adf_test(x, AdfConfig(max_lag=6))
            design, target = _adf_design(x, result.lag_used, result.n_obs, True)
            oracle = ols_oracle_longdouble(design, target, index=2)
            assert result.t_stat == pytest.approx(oracle, abs=1e-8)

    def test_constant_segment(self):
        with pytest.raises(ValueError, match="degenerate regression"):
            adf_test(np.full(100, 3.0))

    def test_short_segment(self):
        with pytest.raises(ValueError, match="too short"):
            adf_test(np.arange(10.0), AdfConfig(max_lag=12))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdfConfig(max_lag=-1)
        with pytest.raises(ValueError):
            AdfConfig(significance=1.5)


class TestMacKinnon:
    def test_published_five_percent_critical_value(self):
        # constant+trend large-n 5% critical value is about -3.41
        assert mackinnon_pvalue(-3.41, include_trend=True) == pytest.approx(0.05, abs=0.005)

    def test_monotone_in_t(self):
        grid = np.linspace(-6.0, 0.5, 200)
        ps = [mackinnon_pvalue(t, include_trend=True) for t in grid]
        assert all(b >= a for a, b in zip(ps, ps[1:]))

    def test_clamps(self):
        assert mackinnon_pvalue(-50.0) == 0.0
        assert mackinnon_pvalue(5.0) == 1.0

    def test_constant_only_table(self):
        # constant-only large-n 5% critical value is about -2.86
        assert mackinnon_pvalue(-2.86, include_trend=False) == pytest.approx(0.05, abs=0.005)


def kendall_brute_force(x: np.ndarray, y: np.ndarray) -> float:
    n = len(x)
    s = n1 = n2 = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = np.sign(x[i] - x[j])
            dy = np.sign(y[i] - y[j])
            s += dx * dy
            n1 += dx == 0
            n2 += dy == 0
    n0 = n * (n - 1) // 2
    return s / math.sqrt((n0 - n1) * (n0 - n2))


class TestCorrelations:
    def _data(self, n=60, seed=0):
        rng = np.random.default_rng(seed)
        base = rng.normal(size=n)
        cols = [base + rng.normal(scale=s, size=n) for s in (0.1, 0.5, 1.0, 2.0, 4.0)]
        cols.append(np.round(np.abs(base), 1))  # heavy ties like rainfall
        return np.column_stack(cols)

    @pytest.mark.parametrize("method", ["pearson", "kendall", "spearman"])
    def test_self_correlation(self, method):
        x = np.random.default_rng(1).normal(size=40)
        data = np.column_stack([x] * 6)
        cm = correlation_matrix(data, method)
        np.testing.assert_allclose(cm.matrix, 1.0, atol=1e-12)

    @pytest.mark.parametrize("method", ["pearson", "kendall", "spearman"])
    def test_antisymmetry(self, method):
        x = np.random.default_rng(2).normal(size=40)
        data = np.column_stack([x, -x] * 3)
        cm = correlation_matrix(data, method)
        assert cm.matrix[0, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_kendall_hand_case(self):
        # 6 pairs: 5 concordant, 1 discordant
        tau = _kendall_tau_b(np.array([1.0, 2, 3, 4]), np.array([1.0, 3, 2, 4]))
        assert tau == pytest.approx((5 - 1) / 6)

    def test_kendall_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            x = rng.integers(0, 5, size=30).astype(float)
            y = rng.integers(0, 5, size=30).astype(float)
            if len(set(x)) < 2 or len(set(y)) < 2:
                continue
            assert _kendall_tau_b(x, y) == pytest.approx(kendall_brute_force(x, y), abs=1e-12)

    def test_kendall_mergesort_path_equals_pair_scan(self):
        rng = np.random.default_rng(4)
        for n in (50, 333, 1000):
            x = np.round(rng.normal(size=n), 1)
            y = np.round(rng.normal(size=n), 1)
            slow = _kendall_tau_b(x, y, exact_threshold=10**9)
            fast = _kendall_tau_b(x, y, exact_threshold=1)
            assert fast == pytest.approx(slow, abs=1e-12)

    def test_matrix_symmetric_unit_diagonal(self):
        for method in ("pearson", "kendall", "spearman"):
            cm = correlation_matrix(self._data(), method)
            np.testing.assert_array_equal(cm.matrix, cm.matrix.T)
            np.testing.assert_array_equal(np.diag(cm.matrix), np.ones(6))
            assert np.all(np.abs(cm.matrix[cm.defined]) <= 1 + 1e-12)

    def test_constant_column_flagged_not_zeroed(self):
        data = self._data()
        data[:, 3] = 7.0
        cm = correlation_matrix(data, "pearson")
        assert not cm.defined[0, 3]
        assert np.isnan(cm.matrix[0, 3])
        assert cm.defined[0, 1]

    def test_pearson_scale_shift(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=50), rng.normal(size=50)
        base = correlation_matrix(np.column_stack([x, y] * 3), "pearson").matrix[0, 1]
        scaled = correlation_matrix(np.column_stack([-2 * x + 3, 5 * y - 1] * 3),
                                    "pearson").matrix[0, 1]
        assert scaled == pytest.approx(-base, abs=1e-12)

    @pytest.mark.parametrize("method", ["kendall", "spearman"])
    def test_rank_methods_monotone_invariant(self, method):
        rng = np.random.default_rng(6)
        x, y = rng.normal(size=50), rng.normal(size=50)
        base = correlation_matrix(np.column_stack([x, y] * 3), method).matrix[0, 1]
        warped = correlation_matrix(np.column_stack([np.exp(x), y**3] * 3),
                                    method).matrix[0, 1]
        assert warped == pytest.approx(base, abs=1e-12)

    def test_pearson_matches_numpy(self):
        data = self._data(seed=8)
        cm = correlation_matrix(data, "pearson")
        np.testing.assert_allclose(cm.matrix, np.corrcoef(data.T), atol=1e-12)

    def test_spearman_is_pearson_on_average_ranks(self):
        rng = np.random.default_rng(9)
        x = rng.integers(0, 4, size=40).astype(float)
        y = rng.normal(size=40)
        data = np.column_stack([x, y] * 3)
        got = correlation_matrix(data, "spearman").matrix[0, 1]

        def avg_rank(v):
            order = np.argsort(v, kind="stable")
            ranks = np.empty(len(v))
            i = 0
            sv = v[order]
            while i < len(v):
                j = i
                while j < len(v) and sv[j] == sv[i]:
                    j += 1
                ranks[order[i:j]] = (i + j + 1) / 2.0
                i = j
            return ranks

        rx, ry = avg_rank(x), avg_rank(y)
        expected = np.corrcoef(rx, ry)[0, 1]
        assert got == pytest.approx(expected, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="unknown correlation method"):
            correlation_matrix(np.ones((10, 6)), "blorp")
        with pytest.raises(ValueError, match="at least 3"):
            correlation_matrix(np.ones((2, 6)), "pearson")

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_kendall_paths_agree_property(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 120))
        x = np.round(rng.normal(size=n), 1)
        y = np.where(rng.random(n) < 0.6, 0.0, np.round(rng.random(n), 2))
        if len(set(x)) < 2 or len(set(y)) < 2:
            return
        assert _kendall_tau_b(x, y, exact_threshold=10**9) == pytest.approx(
            _kendall_tau_b(x, y, exact_threshold=1), abs=1e-12)
