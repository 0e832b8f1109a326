"""Tests for seeding, intervals, replicated AC estimation, the exact oracle and rate fits."""

import itertools
import math

import numpy as np
import pytest
from scipy.stats import binom

from acbound.classifiers import RuleClass, build_holder_net, family_code_net
from acbound.core_model import CellGrid
from acbound.errors import FamilyParameterError, IncompatibleClassifierError, RateFitError
from acbound.lb_family import maximal_separation_subset
from acbound.mc_engine import (
    ACEstimate,
    ClassifierSpec,
    clopper_pearson,
    derive_seed,
    fit_concentration_slope,
    fit_lambda_exponent,
    fit_n_rate,
    flip_count_distribution,
    flip_probability,
    lambda_grid,
    level_matched_exceedance,
    level_matched_family,
    mean_excess_by_n,
    n_rate_exponent,
    oracle_exceedance,
    run_ac,
)
from acbound.observability import PerformanceMonitor


@pytest.fixture(scope="module")
def majority(reference_family):
    return ClassifierSpec("class_erm", rules=RuleClass.cellwise(reference_family))


class TestSeeding:
    def test_deterministic(self):
        assert derive_seed(7, 3, 11) == derive_seed(7, 3, 11)
        assert 0 <= derive_seed(2**64 - 1, 32767, 10**6) < 2**64

    def test_distinct_streams(self):
        seeds = {derive_seed(123, s, r) for s in range(100) for r in range(1000)}
        assert len(seeds) == 100_000

    def test_depends_on_every_coordinate(self):
        base = derive_seed(1, 2, 3)
        assert len({base, derive_seed(0, 2, 3), derive_seed(1, 3, 3), derive_seed(1, 2, 4)}) == 4
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)


class TestClopperPearson:
    def test_zero_successes(self):
        lo, hi = clopper_pearson(0, 10)
        assert lo == 0.0
        assert hi == pytest.approx(1 - 0.025 ** 0.1)
        assert hi == pytest.approx(0.3085, abs=1e-4)

    def test_all_successes(self):
        lo, hi = clopper_pearson(10, 10)
        assert lo == pytest.approx(0.025 ** 0.1)
        assert hi == 1.0

    def test_half(self):
        lo, hi = clopper_pearson(5, 10)
        assert lo == pytest.approx(0.1871, abs=1e-4)
        assert hi == pytest.approx(0.8129, abs=1e-4)

    def test_vectorized(self):
        lo, hi = clopper_pearson(np.array([0, 3, 20]), 20)
        assert lo.shape == hi.shape == (3,)
        assert np.all(lo <= np.array([0, 3, 20]) / 20)
        assert np.all(hi >= np.array([0, 3, 20]) / 20)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            clopper_pearson(0, 0)

    def test_coverage_at_oracle_values(self, tiny_family):
        grid = lambda_grid(1, 3, 3, unit="excess_unit", family=tiny_family)
        rng = np.random.default_rng(93)
        m = 200
        for p in oracle_exceedance(tiny_family, 0, 40, grid):
            counts = rng.binomial(m, p, size=1000)
            lo, hi = clopper_pearson(counts, m)
            assert np.mean((lo <= p) & (p <= hi)) >= 0.93


class TestRunAC:
    def test_extreme_levels(self, reference_family, majority):
        est = run_ac(reference_family, [0, 5], majority, n=50, m=20, lambda_grid=[0.0, 0.03], master_seed=1)
        assert est.exceed_counts[:, 0].tolist() == [20, 20]
        assert est.exceed_counts[:, 1].tolist() == [0, 0]
        assert est.p_hat[:, 0].tolist() == [1.0, 1.0]
        assert np.all(est.mean_excess <= 0.025 + 1e-12)

    def test_tallies_are_nonincreasing_in_lambda(self, reference_family, majority):
        grid = lambda_grid(0, 16, 17, unit="excess_unit", family=reference_family)
        est = run_ac(reference_family, [3], majority, n=100, m=30, lambda_grid=grid, master_seed=2)
        assert np.all(np.diff(est.exceed_counts[0]) <= 0)

    def test_reproducible(self, reference_family, majority):
        kwargs = dict(n=60, m=16, lambda_grid=[0.0, 0.005, 0.01], master_seed=9)
        first = run_ac(reference_family, [1, 2], majority, **kwargs)
        second = run_ac(reference_family, [1, 2], majority, **kwargs)
        assert np.array_equal(first.exceed_counts, second.exceed_counts)
        assert np.array_equal(first.mean_excess, second.mean_excess)

    def test_worker_count_does_not_matter(self, reference_family, majority):
        kwargs = dict(n=60, m=24, lambda_grid=[0.002, 0.006, 0.01], master_seed=4)
        serial = run_ac(reference_family, [0, 7], majority, workers=1, **kwargs)
        pooled = run_ac(reference_family, [0, 7], majority, workers=2, **kwargs)
        assert np.array_equal(serial.exceed_counts, pooled.exceed_counts)
        assert np.array_equal(serial.mean_excess, pooled.mean_excess)

    def test_net_erm_over_codes(self, reference_family):
        spec = ClassifierSpec("net_erm", net=family_code_net(reference_family, range(64)))
        est = run_ac(reference_family, [0], spec, n=40, m=10, lambda_grid=[0.0], master_seed=0)
        assert est.exceed_counts[0, 0] == 10

    def test_net_erm_over_holder_lattice(self, reference_family):
        spec = ClassifierSpec("net_erm", net=build_holder_net(1, 1.0, 1.0, 0.25))
        est = run_ac(reference_family, [0], spec, n=40, m=5, lambda_grid=[0.0, 0.03], master_seed=0)
        assert est.exceed_counts[0].tolist() == [5, 0]

    def test_monitor_records_stage(self, reference_family, majority):
        monitor = PerformanceMonitor()
        run_ac(reference_family, [0], majority, n=20, m=4, lambda_grid=[0.0], master_seed=0, monitor=monitor)
        assert monitor.get_stats("run_ac n=20")["count"] == 1

    def test_argument_errors(self, reference_family, majority):
        with pytest.raises(ValueError):
            run_ac(reference_family, [0], majority, n=10, m=0, lambda_grid=[0.0], master_seed=0)
        with pytest.raises(ValueError):
            run_ac(reference_family, [], majority, n=10, m=1, lambda_grid=[0.0], master_seed=0)
        with pytest.raises(ValueError):
            run_ac(reference_family, [0], majority, n=10, m=1, lambda_grid=[0.2, 0.1], master_seed=0)
        with pytest.raises(IndexError):
            run_ac(reference_family, [40_000], majority, n=10, m=1, lambda_grid=[0.0], master_seed=0)

    def test_incompatible_classifiers(self, reference_family, tiny_family):
        other_grid = ClassifierSpec("class_erm", rules=RuleClass.cellwise(CellGrid(1, 8)))
        with pytest.raises(IncompatibleClassifierError):
            run_ac(reference_family, [0], other_grid, n=10, m=1, lambda_grid=[0.0], master_seed=0)
        foreign = ClassifierSpec("net_erm", net=family_code_net(tiny_family, range(4)))
        with pytest.raises(IncompatibleClassifierError):
            run_ac(reference_family, [0], foreign, n=10, m=1, lambda_grid=[0.0], master_seed=0)
        two_d = ClassifierSpec("net_erm", net=build_holder_net(2, 1.0, 0.0, 0.5))
        with pytest.raises(IncompatibleClassifierError):
            run_ac(reference_family, [0], two_d, n=10, m=1, lambda_grid=[0.0], master_seed=0)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ClassifierSpec("net_erm")
        with pytest.raises(ValueError):
            ClassifierSpec("knn", rules=RuleClass.cellwise(CellGrid(1, 4)))


class TestEstimates:
    def _estimate(self):
        return ACEstimate(
            family_id="abc",
            n=100,
            m=10,
            lambda_grid=(0.001, 0.002),
            sigma_indices=(4, 9),
            exceed_counts=np.array([[3, 1], [3, 2]]),
            mean_excess=np.array([0.01, 0.02]),
        )

    def test_worst_case_prefers_smallest_index(self):
        worst = self._estimate().worst_case()
        assert [w.sigma_index for w in worst] == [4, 9]
        assert [w.p_hat for w in worst] == [0.3, 0.2]
        assert all(w.ci_lo <= w.p_hat <= w.ci_hi for w in worst)

    def test_rows_rebuild(self):
        est = self._estimate()
        rebuilt = ACEstimate.from_rows(est.rows(), est.mean_excess_rows())
        assert len(rebuilt) == 1
        assert np.array_equal(rebuilt[0].exceed_counts, est.exceed_counts)
        assert rebuilt[0].sigma_indices == (4, 9)
        assert rebuilt[0].mean_excess.tolist() == [0.01, 0.02]

    def test_mean_excess_by_n(self):
        assert mean_excess_by_n([self._estimate()]) == [(100, 0.02)]


class TestLambdaGrid:
    def test_excess_units(self, reference_family):
        grid = lambda_grid(1, 4, 4, unit="excess_unit", family=reference_family)
        assert grid == pytest.approx((0.0015625, 0.003125, 0.0046875, 0.00625))

    def test_geometric(self):
        assert lambda_grid(0.001, 0.1, 3, scale="geometric") == pytest.approx((0.001, 0.01, 0.1))
        with pytest.raises(ValueError):
            lambda_grid(0.0, 0.1, 3, scale="geometric")

    def test_invalid(self):
        with pytest.raises(ValueError):
            lambda_grid(0.2, 0.1, 3)
        with pytest.raises(ValueError):
            lambda_grid(1, 2, 2, unit="excess_unit")


class TestOracle:
    def test_flip_probability(self):
        assert flip_probability(0, 0.2, +1) == 0.0
        assert flip_probability(0, 0.2, -1) == 1.0
        # two samples: a tie goes to label 1
        assert flip_probability(2, 0.2, +1) == pytest.approx(0.4 ** 2)
        assert flip_probability(2, 0.2, -1) == pytest.approx(1 - 0.6 ** 2)

    @pytest.mark.parametrize("n", [10, 80, 300])
    def test_law_sums_to_one_with_exact_mean(self, reference_family, n):
        law = flip_count_distribution(reference_family, 5, n)
        assert law.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(law >= -1e-15)
        occupancy = np.arange(n + 1)
        occupancy_pmf = binom.pmf(occupancy, n, reference_family.w)
        expected = sum(
            float(np.sum(occupancy_pmf * flip_probability(occupancy, reference_family.a, int(s))))
            for s in reference_family.sigma(5)
        )
        assert float(np.arange(law.size) @ law) == pytest.approx(expected, abs=1e-9)

    def test_matches_enumeration(self, tiny_family):
        # every ordered sample of size 4 over (cell, label) pairs and the null set
        n, sigma = 4, tiny_family.sigma(5)
        b, w, a = tiny_family.b, tiny_family.w, tiny_family.a
        outcomes = [(k, y, w * (1 + (a if y else -a) * sigma[k]) / 2) for k in range(b) for y in (0, 1)]
        outcomes.append((None, None, 1 - tiny_family.bw))
        law = np.zeros(b + 1)
        for draw in itertools.product(outcomes, repeat=n):
            sizes, ones = np.zeros(b), np.zeros(b)
            for k, y, _ in draw:
                if k is not None:
                    sizes[k] += 1
                    ones[k] += y
            flips = sum(
                (ones[k] < sizes[k] / 2) if sigma[k] > 0 else (ones[k] >= sizes[k] / 2) for k in range(b)
            )
            law[flips] += math.prod(p for _, _, p in draw)
        assert flip_count_distribution(tiny_family, 5, n) == pytest.approx(law, abs=1e-12)

    def test_exceedance_endpoints(self, reference_family):
        p = oracle_exceedance(reference_family, 0, 100, [0.0, 0.03])
        assert p.tolist() == pytest.approx([1.0, 0.0])

    def test_exceedance_nonincreasing(self, reference_family):
        grid = lambda_grid(0, 16, 17, unit="excess_unit", family=reference_family)
        p = oracle_exceedance(reference_family, 3, 200, grid)
        assert np.all(np.diff(p) <= 1e-12)

    def test_level_matched_family(self, reference_family):
        lam = reference_family.lambda0 * 0.3
        family = level_matched_family(reference_family, lam)
        assert family.delta == pytest.approx(0.3)
        # one wrong cell is worth 16 lambda at q=16, alpha=1
        assert family.excess_unit == pytest.approx(16 * lam)
        assert np.array_equal(family.codes, reference_family.codes)
        assert family.family_id != reference_family.family_id

    def test_level_matched_exceedance(self, tiny_family):
        lambdas = [tiny_family.lambda0 * d for d in (0.3, 0.6)]
        pairs = level_matched_exceedance(tiny_family, 30, lambdas, sigma_subset_size=16)
        for lam, p in pairs:
            family = level_matched_family(tiny_family, lam)
            expected = max(1.0 - flip_count_distribution(family, s, 30)[0] for s in range(16))
            assert p == pytest.approx(expected, abs=1e-12)
        assert pairs[1][1] < pairs[0][1]

    def test_level_outside_family_range(self, reference_family):
        with pytest.raises(FamilyParameterError):
            level_matched_family(reference_family, reference_family.lambda0 * 1.5)

    @pytest.mark.slow
    def test_matches_simulation(self, reference_family, majority):
        grid = lambda_grid(1, 10, 10, unit="excess_unit", family=reference_family)
        m = 2000
        est = run_ac(reference_family, [0], majority, n=200, m=m, lambda_grid=grid, master_seed=17)
        exact = oracle_exceedance(reference_family, 0, 200, grid)
        spread = 4.0 * np.sqrt(exact * (1 - exact) / m) + 2.0 / m
        assert np.all(np.abs(est.p_hat[0] - exact) <= spread)


class TestFits:
    def test_lambda_exponent_recovers_planted_slope(self):
        pairs = [(lam, math.exp(-100.0 * lam ** 1.5)) for lam in (0.01, 0.02, 0.05, 0.1)]
        fit = fit_lambda_exponent(pairs, alpha=1.0)
        assert fit.slope == pytest.approx(1.5, abs=1e-9)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.theory == pytest.approx(1.5)

    def test_lambda_exponent_excludes_degenerate_points(self):
        pairs = [(0.0, 1.0), (0.01, 1.0)] + [(lam, math.exp(-50.0 * lam ** 2)) for lam in (0.05, 0.1, 0.2)]
        pairs.append((0.5, 0.0))
        fit = fit_lambda_exponent(pairs)
        assert fit.slope == pytest.approx(2.0, abs=1e-9)
        assert len(fit.excluded) == 3

    def test_lambda_exponent_from_estimate(self):
        lams = (0.01, 0.02, 0.04)
        counts = np.array([[int(round(1000 * math.exp(-100 * lam ** 1.5))) for lam in lams]])
        est = ACEstimate("f", 100, 1000, lams, (0,), counts, np.array([0.0]))
        fit = fit_lambda_exponent(est, alpha=1.0)
        assert fit.slope == pytest.approx(1.5, abs=0.05)

    def test_concentration_slope(self):
        triples = [
            (n, lam, math.exp(-2.0 * n * lam ** 1.5)) for n in (100, 200, 400) for lam in (0.01, 0.02)
        ]
        fit = fit_concentration_slope(triples, alpha=1.0)
        assert fit.slope == pytest.approx(2.0, abs=1e-9)
        assert fit.r2 == pytest.approx(1.0)

    def test_concentration_needs_three_sizes(self):
        triples = [(n, lam, 0.5) for n in (100, 200) for lam in (0.01, 0.02)]
        with pytest.raises(RateFitError):
            fit_concentration_slope(triples, alpha=1.0)

    def test_n_rate(self):
        points = [(n, 3.0 * n ** -0.5) for n in (100, 400, 1600, 6400)]
        fit = fit_n_rate(points, alpha=1.0, r_prime=1.0)
        assert fit.slope == pytest.approx(-0.5, abs=1e-9)
        assert fit.theory == n_rate_exponent(1.0, 1.0)
        assert fit.theory == pytest.approx(-0.5)
        assert fit.intercept == pytest.approx(math.log(3.0))

    @pytest.mark.parametrize("alpha, r_prime", [(1.0, 1.0), (2.0, 0.5), (math.inf, 1.0)])
    def test_n_rate_recovers_planted_exponent_under_noise(self, alpha, r_prime):
        rng = np.random.default_rng(7)
        theory = n_rate_exponent(alpha, r_prime)
        points = [(100 * 2 ** i, 2.0 * (100 * 2 ** i) ** theory * math.exp(rng.normal(0.0, 0.05))) for i in range(7)]
        fit = fit_n_rate(points, alpha=alpha, r_prime=r_prime)
        assert fit.slope == pytest.approx(theory, abs=0.06)
        assert fit.theory == theory
        assert fit.r2 >= 0.98

    def test_n_rate_drops_zeros(self, package_logs):
        points = [(50, 0.0)] + [(n, n ** -0.75) for n in (100, 400, 1600, 6400)]
        fit = fit_n_rate(points, alpha=1.0, r_prime=1.0)
        assert fit.excluded == ((50, 0.0),)
        assert fit.slope == pytest.approx(-0.75, abs=1e-9)
        assert any("Dropped zero mean excess" in r.getMessage() for r in package_logs.records)

    def test_n_rate_errors(self):
        with pytest.raises(RateFitError):
            fit_n_rate([(100, 0.1), (400, 0.05), (1600, 0.02)], 1.0, 1.0)
        with pytest.raises(RateFitError):
            fit_n_rate([(100, 0.1), (200, 0.05), (300, 0.02), (400, 0.01)], 1.0, 1.0)

    def test_too_few_points(self):
        with pytest.raises(RateFitError):
            fit_lambda_exponent([(0.01, 0.5), (0.02, 0.4)])

    def test_infinite_alpha_rate(self):
        assert n_rate_exponent(math.inf, 3.0) == -1.0

    def test_row_layout(self):
        fit = fit_n_rate([(n, n ** -0.5) for n in (10, 40, 160, 640)], 1.0, 1.0)
        assert list(fit.row()) == ["kind", "slope", "intercept", "r2", "n_points", "alpha", "r_prime"]
        assert fit.to_dict()["theory"] == pytest.approx(-0.5)


@pytest.mark.slow
class TestAcceptance:
    def test_majority_exceedance_decays_with_n(self, reference_family, majority):
        codes = maximal_separation_subset(reference_family, 3)
        grid = lambda_grid(2, 6, 3, unit="excess_unit", family=reference_family)
        tails = []
        for n in (100, 400, 1600):
            est = run_ac(reference_family, codes, majority, n=n, m=400, lambda_grid=grid, master_seed=5)
            tails.append(est.p_hat.max(axis=0))
        assert np.all(tails[2] <= tails[0])

    # n = 512, m = 5000, ten codes, lambda = k a w for k = 1..8

    @pytest.fixture(scope="class")
    def reference_run(self, reference_family, majority):
        codes = maximal_separation_subset(reference_family, 10)
        grid = lambda_grid(1, 8, 8, unit="excess_unit", family=reference_family)
        return run_ac(reference_family, codes, majority, n=512, m=5000, lambda_grid=grid, master_seed=20240517)

    def test_worst_case_decreases_in_lambda(self, reference_run):
        worst = reference_run.worst_case()
        p = [wc.p_hat for wc in worst]
        assert all(x >= y for x, y in zip(p, p[1:]))
        # k = 1 and k = 2 may both sit at 5000 / 5000 on some code
        assert all(x > y for x, y in zip(p[1:], p[2:]))
        assert worst[-1].ci_hi < worst[0].ci_lo

    def test_oracle_inside_intervals(self, reference_family, reference_run):
        lo, hi = reference_run.ci()
        inside = 0
        for s, sigma in enumerate(reference_run.sigma_indices):
            exact = oracle_exceedance(reference_family, sigma, 512, reference_run.lambda_grid)
            inside += int(np.count_nonzero((lo[s] <= exact) & (exact <= hi[s])))
        assert inside >= 7 * lo.size / 8

    def test_level_matched_lambda_exponent(self, reference_family):
        lambdas = [reference_family.lambda0 * d for d in np.geomspace(0.25, 0.8, 6)]
        pairs = level_matched_exceedance(reference_family, 81920, lambdas, sigma_subset_size=2)
        fit = fit_lambda_exponent(pairs, alpha=1.0)
        assert fit.excluded == ()
        assert 1.15 <= fit.slope <= 1.85
        assert fit.r2 >= 0.99

    def test_level_matched_concentration(self, reference_family):
        lam = reference_family.lambda0 * 0.5
        triples = []
        for n in (10240, 20480, 40960, 81920):
            ((_, p),) = level_matched_exceedance(reference_family, n, [lam], sigma_subset_size=2)
            triples.append((n, lam, p))
        fit = fit_concentration_slope(triples, alpha=1.0)
        assert fit.excluded == ()
        assert fit.r2 >= 0.9
        assert fit.slope > 0
