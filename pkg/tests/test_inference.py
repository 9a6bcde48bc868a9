import numpy as np
import pytest
from scipy import stats

from genevar import inference
from genevar.inference import (
    gene_sigma,
    power_increase,
    select_genes,
    t_pvalues,
    validation_tests,
    z_pvalues,
)

constants_for = inference.test_constants
from genevar.model import (
    GenevarError,
    NonpositiveSigma,
    TooFewReplicates,
    VarianceCurve,
    ZeroDensityEverywhere,
)
from conftest import make_array


class TestConstantsComputation:
    def test_lambda_closed_forms(self):
        assert constants_for(10, mc_draws=1000).lambda_i == pytest.approx(
            np.sqrt(180.0 / np.pi))
        assert constants_for(2, mc_draws=1000).lambda_i == pytest.approx(
            np.sqrt(4.0 / np.pi))

    def test_kappa_reproducible_and_stable(self):
        a = constants_for(10, mc_draws=1_000_000, seed=1)
        b = constants_for(10, mc_draws=1_000_000, seed=2)
        again = constants_for(10, mc_draws=1_000_000, seed=1)
        assert a.kappa_i == again.kappa_i
        assert abs(a.kappa_i - b.kappa_i) < 2e-3

    def test_kappa_matches_absolute_residual_mean(self):
        # the Monte Carlo mean of the absolute-residual sum must sit at
        # lambda_I; check the generator through a small moment identity
        rng = np.random.default_rng(3)
        e = rng.standard_normal((200_000, 6))
        v = np.abs(e - e.mean(axis=1, keepdims=True)).sum(axis=1)
        lam = np.sqrt(2 * 6 * 5 / np.pi)
        assert v.mean() == pytest.approx(lam, abs=3 * v.std() / np.sqrt(v.size))

    def test_requires_two_replicates(self):
        with pytest.raises(TooFewReplicates):
            constants_for(1)


def null_array(rng, g=19, i=10, sigma=None):
    sigma = np.ones(g) if sigma is None else sigma
    alpha = rng.normal(0, 1, g)
    y = alpha[:, None] + sigma[:, None] * rng.standard_normal((g, i))
    return make_array(y, x=np.full((g, i), 10.0)), sigma


class TestValidationTests:
    def test_zero_residuals_maximal_pvalues(self):
        y = np.tile(np.array([[1.0], [2.0], [-1.0]]), (1, 4))
        arr = make_array(y, x=np.full((3, 4), 10.0))
        res = validation_tests(arr, np.ones(3))
        assert res.t1 == 0.0
        assert res.p1 == pytest.approx(1.0)
        assert res.t3 < 0
        assert res.p3 > 0.95
        assert res.p4 > 0.95

    def test_scale_equivariance(self, rng):
        arr, sigma = null_array(rng)
        base = validation_tests(arr, sigma)
        c = 2.7
        mean = arr.y.mean(axis=1, keepdims=True)
        scaled = make_array(mean + c * (arr.y - mean), x=arr.x)
        res = validation_tests(scaled, c * sigma)
        assert res.t1 == pytest.approx(base.t1, rel=1e-12)
        assert res.t2 == pytest.approx(base.t2, rel=1e-12)
        assert res.t3 == pytest.approx(base.t3, rel=1e-12)
        assert res.t4 == pytest.approx(base.t4, rel=1e-12)

    def test_inflated_scales_give_large_pvalues(self, rng):
        arr, sigma = null_array(rng)
        res = validation_tests(arr, 10.0 * sigma)
        assert min(res.p1, res.p2, res.p3, res.p4) > 0.99

    def test_residual_inflation_gives_small_pvalues(self, rng):
        arr, sigma = null_array(rng)
        mean = arr.y.mean(axis=1, keepdims=True)
        inflated = make_array(mean + 3.0 * (arr.y - mean), x=arr.x)
        res = validation_tests(inflated, sigma)
        assert max(res.p1, res.p2, res.p3, res.p4) < 0.01

    def test_null_calibration_smoke(self):
        rng = np.random.default_rng(11)
        const = constants_for(10)
        p1s = []
        for _ in range(200):
            arr, sigma = null_array(rng)
            p1s.append(validation_tests(arr, sigma, constants=const).p1)
        assert stats.kstest(p1s, "uniform").pvalue > 1e-3

    def test_nonpositive_sigma_rejected(self, rng):
        arr, sigma = null_array(rng)
        sigma = sigma.copy()
        sigma[0] = 0.0
        with pytest.raises(NonpositiveSigma):
            validation_tests(arr, sigma)


class TestGeneSigma:
    def test_constant_curve(self):
        curve = VarianceCurve(grid=np.linspace(6, 16, 11), values=np.full(11, 0.3))
        got = gene_sigma(curve, [7.0, 12.0, 15.0], lambda p: np.ones_like(p))
        assert got == pytest.approx(0.3)

    def test_two_point_equal_weights(self):
        curve = VarianceCurve(grid=np.array([0.0, 1.0]), values=np.array([1.0, 3.0]))
        got = gene_sigma(curve, [0.0, 1.0], lambda p: np.ones_like(p))
        assert got == pytest.approx(2.0)

    def test_matches_weighted_mean_definition(self, rng):
        grid = np.linspace(6, 16, 21)
        curve = VarianceCurve(grid=grid, values=rng.uniform(0.1, 1.0, 21))
        pts = rng.uniform(6, 16, 5)
        density = lambda p: 0.05 * np.asarray(p) + 0.1
        weights = density(pts)
        got = gene_sigma(curve, pts, density)
        vals = np.interp(pts, grid, curve.values)
        expected = float((vals * weights).sum() / weights.sum())
        assert got == pytest.approx(expected, abs=1e-12)

    def test_zero_density_rejected(self):
        curve = VarianceCurve(grid=np.array([0.0, 1.0]), values=np.array([1.0, 2.0]))
        with pytest.raises(ZeroDensityEverywhere):
            gene_sigma(curve, [0.5], lambda p: np.zeros_like(p))


class TestSelectGenes:
    def test_zero_mean_never_selected(self):
        calls = select_genes([0.0], [1.0], 5, alpha=0.99, fc_threshold=0.0, mode="z")
        assert calls == []

    def test_z_example_selection_boundary(self):
        # mean 1, scale 1, n = 5: z = sqrt(5), two-sided p = 2 Phi(-sqrt(5))
        p_expected = 2 * stats.norm.sf(np.sqrt(5.0))
        assert p_expected == pytest.approx(0.0253, abs=5e-4)
        at_05 = select_genes([1.0], [1.0], 5, alpha=0.05, fc_threshold=1.0, mode="z")
        at_01 = select_genes([1.0], [1.0], 5, alpha=0.01, fc_threshold=1.0, mode="z")
        assert len(at_05) == 1 and len(at_01) == 0
        assert at_05[0].p_z == pytest.approx(p_expected, abs=1e-12)
        assert at_05[0].fold_change == pytest.approx(2.0)

    def test_fold_change_filter(self):
        calls = select_genes([0.4], [0.01], 5, alpha=0.05, fc_threshold=1.5, mode="z")
        assert calls == []  # 2^0.4 = 1.32 < 1.5 despite a tiny p-value

    def test_degenerate_sd_rule(self):
        calls = select_genes([1.0, 0.0], [0.0, 0.0], 5, alpha=0.05,
                             fc_threshold=0.0, mode="t")
        assert len(calls) == 1
        assert calls[0].p_t == 0.0
        assert calls[0].flagged

    def test_t_and_z_statistics_tie(self, rng):
        # identical scale estimates give identical statistics; the decisions
        # coincide once the critical values are swapped
        means = rng.normal(0, 2, 50)
        sd = rng.uniform(0.5, 2.0, 50)
        n = 5
        t_stat, _, _ = t_pvalues(means, sd, n)
        z_stat, _ = z_pvalues(means, sd, n)
        assert np.allclose(t_stat, z_stat, atol=1e-12)
        alpha = 0.05
        t_crit = stats.t.ppf(1 - alpha / 2, n - 1)
        z_crit = stats.norm.ppf(1 - alpha / 2)
        t_selected = {c.gene_id for c in select_genes(means, sd, n, alpha, 0.0, "t")}
        z_by_t_critical = {f"g{k + 1}" for k in range(50)
                           if abs(z_stat[k]) > t_crit}
        assert t_selected == z_by_t_critical
        z_selected = {c.gene_id for c in select_genes(means, sd, n, alpha, 0.0, "z")}
        t_by_z_critical = {f"g{k + 1}" for k in range(50)
                           if abs(t_stat[k]) > z_crit}
        assert z_selected == t_by_z_critical

    def test_pvalues_monotone_in_effect(self):
        means = np.linspace(0.0, 3.0, 16)
        _, p_t, _ = t_pvalues(means, np.ones(16), 5)
        _, p_z = z_pvalues(means, np.ones(16), 5)
        assert np.all(np.diff(p_t) <= 1e-15)
        assert np.all(np.diff(p_z) <= 1e-15)

    def test_unknown_mode_rejected(self):
        with pytest.raises(GenevarError):
            select_genes([1.0], [1.0], 5, 0.05, 1.0, mode="f")


class TestPowerIncrease:
    def test_null_case_exact_zero(self):
        theo, emp = power_increase(np.zeros(10), np.ones(10), 5, 0.05)
        assert theo == 0.0

    def test_single_gene_positive_gain(self):
        theo, _ = power_increase([1.0], [1.0], 5, 0.05)
        assert theo > 0.0
        # direct check of both power functions at delta = 1
        zcrit = stats.norm.ppf(0.975)
        p_z = stats.norm.cdf(-zcrit - np.sqrt(5)) + stats.norm.cdf(-zcrit + np.sqrt(5))
        assert 0 < theo < p_z

    def test_t_power_against_monte_carlo(self):
        # noncentral-t power at delta = 1, n = 5, alpha = 0.05 vs simulation
        rng = np.random.default_rng(17)
        n, delta, alpha = 5, 1.0, 0.05
        draws = rng.standard_normal((200_000, n)) + delta
        t_obs = np.sqrt(n) * draws.mean(axis=1) / draws.std(axis=1, ddof=1)
        tcrit = stats.t.ppf(1 - alpha / 2, n - 1)
        emp_power = np.mean(np.abs(t_obs) > tcrit)
        ncp = np.sqrt(n) * delta
        p_t = stats.nct.sf(tcrit, n - 1, ncp) + stats.nct.cdf(-tcrit, n - 1, ncp)
        se = np.sqrt(emp_power * (1 - emp_power) / t_obs.size)
        assert abs(emp_power - p_t) < 3 * se
        theo, _ = power_increase([delta], [1.0], n, alpha)
        zcrit = stats.norm.ppf(1 - alpha / 2)
        p_z = stats.norm.cdf(-zcrit - ncp) + stats.norm.cdf(-zcrit + ncp)
        assert theo == pytest.approx(p_z - p_t, abs=1e-12)

    def test_extreme_noncentrality_is_finite(self):
        theo, _ = power_increase([20.0, -18.0], [0.4, 0.4], 5, 0.001)
        assert np.isfinite(theo)
        assert abs(theo) < 1e-6  # both tests have power ~ 1 there

    def test_empirical_counts_difference(self, rng):
        means = np.concatenate([np.zeros(500), rng.laplace(0, 1, 100)])
        sigma = np.full(600, 0.5)
        sd = sigma * np.sqrt(rng.chisquare(4, 600) / 4)
        theo, emp = power_increase(means, sigma, 5, 0.01, sample_sd=sd)
        assert theo > 0
        assert emp >= 0
