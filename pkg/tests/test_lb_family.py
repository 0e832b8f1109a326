"""Tests for the bump profile, sign codes, the family and its closed forms."""

import math

import numpy as np
import pytest

from acbound.bounds_calculus import FiniteMeasure, chi2_divergence, general_lower_bound, kl_divergence
from acbound.core_model import CellGrid, CellwiseRule, Point, RegressionFn, ThresholdRule, integrate
from acbound.errors import EnumerationTooLargeError, FamilyParameterError, NotCellwiseError
from acbound.lb_family import (
    BumpProfile,
    LowerBoundFamily,
    bump_eval,
    build_family,
    delta_for_level,
    eta_sigma,
    exact_bayes_risk,
    exact_excess_cellwise,
    gilbert_varshamov_bound,
    hamming_extremes,
    holder_q,
    holder_seminorm,
    maximal_separation_subset,
    minimax_lower_bound,
    pairwise_stats,
    sample_dataset,
    sample_null_set,
    separation_constants,
    smooth_ramp,
    verify_family,
    vg_greedy,
)

TOL = 1e-12
QUAD_TOL = 1e-6


class TestBump:
    def test_ramp_endpoints(self):
        values = smooth_ramp(np.array([-0.5, 0.0, 0.5, 1.0, 2.0]))
        assert values.tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]

    def test_plateau_and_support(self):
        profile = BumpProfile(0.25)
        assert bump_eval(profile, (0.5,)) == 0.25
        assert bump_eval(profile, (0.25,)) == 0.25
        assert bump_eval(profile, (0.1,)) == 0.0
        assert bump_eval(profile, Point((0.9,))) == 0.0
        assert bump_eval(profile, (3 / 16,)) == pytest.approx(0.125)

    def test_product_form(self):
        profile = BumpProfile(0.4, d=2)
        assert bump_eval(profile, (0.5, 0.5)) == pytest.approx(0.4)
        assert bump_eval(profile, (0.5, 0.05)) == 0.0
        assert bump_eval(profile, (3 / 16, 3 / 16)) == pytest.approx(0.1)

    def test_bounded_by_c2(self):
        profile = BumpProfile(0.3)
        values = profile.evaluate(np.linspace(0, 1, 10_001))
        assert values.min() >= 0.0
        assert values.max() == pytest.approx(0.3)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            bump_eval(BumpProfile(0.25), (0.5, 0.5))

    def test_c2_range(self):
        with pytest.raises(FamilyParameterError):
            BumpProfile(0.5)


class TestCodes:
    def test_even_weight_code(self):
        codes = vg_greedy(16, 2)
        assert codes.shape == (32768, 16)
        assert hamming_extremes(codes) == (2, 16)
        assert np.all(codes[0] == -1)

    def test_separation_four(self):
        codes = vg_greedy(8, 4)
        h_min, _ = hamming_extremes(codes)
        assert h_min >= 4
        assert codes.shape[0] >= gilbert_varshamov_bound(8, 4)

    def test_randomized_mode(self):
        codes = vg_greedy(32, 4, mode="randomized", budget=300, seed=3)
        assert codes.shape[1] == 32
        assert hamming_extremes(codes)[0] >= 4
        assert np.array_equal(codes, vg_greedy(32, 4, mode="randomized", budget=300, seed=3))

    def test_exhaustive_limit(self):
        with pytest.raises(EnumerationTooLargeError):
            vg_greedy(25, 4)

    def test_gilbert_varshamov(self):
        assert gilbert_varshamov_bound(16, 2) == pytest.approx(65536 / 17)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            vg_greedy(8, 2, mode="lattice")


class TestFamily:
    def test_reference_constants(self, reference_family):
        fam = reference_family
        assert fam.b == 16
        assert fam.code_count == 32768
        assert fam.min_hamming == 2
        assert fam.w == pytest.approx(0.01397542, abs=1e-8)
        assert fam.a == pytest.approx(0.1118034, abs=1e-7)
        assert fam.bw == pytest.approx(0.2236068, abs=1e-7)
        assert fam.excess_unit == pytest.approx(0.0015625, abs=TOL)
        assert fam.margin_constant == pytest.approx(4.0)
        assert fam.lambda0 == pytest.approx(0.00048828125, abs=TOL)
        assert fam.null_volume == pytest.approx(0.25)
        assert fam.warnings == ()

    def test_excess_unit_is_a_times_w(self, reference_family):
        assert reference_family.excess_unit == pytest.approx(reference_family.a * reference_family.w, abs=TOL)

    @pytest.mark.parametrize(
        "override",
        [{"c2": 0.6}, {"delta": 1.0}, {"delta": 0.0}, {"C": 1.5}, {"alpha": math.inf}, {"d": 4}, {"q": 0}],
    )
    def test_parameter_errors(self, override):
        params = dict(d=1, q=8, delta=0.2, alpha=1.0, C=0.5, c2=0.25)
        params.update(override)
        with pytest.raises(FamilyParameterError):
            build_family(**params)

    def test_error_names_constraint(self):
        with pytest.raises(FamilyParameterError, match="c2"):
            build_family(1, 8, 0.2, 1.0, 0.5, 0.6)

    def test_small_family_warns(self, tiny_family):
        assert tiny_family.code_count == 16
        assert any("below" in w for w in tiny_family.warnings)

    def test_eta_on_plateau(self, reference_family):
        fam = reference_family
        sigma = fam.sigma(9)
        for k in range(16):
            x = Point(((k + 0.5) / 16,))
            assert fam.cell_index(x) == k
            assert eta_sigma(fam, 9, x) == pytest.approx(0.5 + sigma[k] * fam.a / 2)

    def test_eta_is_half_on_null_set(self, reference_family):
        X = np.array([[0.0], [1 / 16 + 0.001], [0.999]])
        assert np.all(reference_family.eta_values(X, reference_family.sigma(3)) == 0.5)

    def test_index_range(self, reference_family):
        with pytest.raises(IndexError):
            reference_family.sigma(32768)

    def test_family_id_is_stable(self, reference_family):
        again = build_family(1, 16, 0.2, 1.0, 0.5, 0.25)
        assert again.family_id == reference_family.family_id
        other = build_family(1, 16, 0.3, 1.0, 0.5, 0.25)
        assert other.family_id != reference_family.family_id

    def test_json_round_trip(self, tmp_path, tiny_family):
        path = tmp_path / "family.json"
        tiny_family.save(path)
        loaded = LowerBoundFamily.load(path)
        assert loaded.family_id == tiny_family.family_id
        assert np.array_equal(loaded.codes, tiny_family.codes)
        assert loaded.warnings == tiny_family.warnings

    def test_loaded_family_keeps_closed_forms(self, tmp_path, tiny_family):
        path = tmp_path / "family.json"
        tiny_family.save(path)
        loaded = LowerBoundFamily.load(path)
        assert loaded is not tiny_family
        dist = tiny_family.distribution(0)
        wrong = int(np.count_nonzero(loaded.sigma(3) != tiny_family.sigma(0)))
        assert wrong > 0
        excess = dist.exact_excess(ThresholdRule(loaded.regression(3)))
        assert excess == pytest.approx(wrong * tiny_family.excess_unit, abs=TOL)
        assert dist.exact_sup_distance(loaded.regression(3)) == pytest.approx(tiny_family.a, abs=TOL)
        assert dist.exact_sup_distance(loaded.regression(0)) == 0.0

    def test_to_dict_derived(self, reference_family):
        derived = reference_family.to_dict()["derived"]
        assert derived["C_M"] == pytest.approx(4.0)
        assert derived["code_count"] == 32768

    def test_two_dimensional_family(self):
        fam = build_family(2, 4, 0.5, 1.0, 1.0, 0.4)
        assert fam.b == 16
        assert fam.grid == CellGrid(2, 4)
        assert fam.null_volume == pytest.approx(1 - 9 / 16)


class TestClosedForms:
    def test_bayes_risk(self, reference_family):
        assert exact_bayes_risk(reference_family) == pytest.approx(0.4875, abs=TOL)
        dist = reference_family.distribution(11)
        eta = dist.eta
        quad = integrate(dist, lambda X: np.minimum(eta.evaluate(X), 1 - eta.evaluate(X)), resolution=2000)
        assert quad == pytest.approx(0.4875, abs=QUAD_TOL)

    def test_excess_cellwise(self, reference_family):
        rule = reference_family.bayes_rule(2).flipped([0, 15])
        assert exact_excess_cellwise(reference_family, 2, rule) == pytest.approx(0.003125, abs=TOL)
        with pytest.raises(NotCellwiseError):
            exact_excess_cellwise(reference_family, 2, CellwiseRule(CellGrid(1, 8), (1,) * 8))

    def test_pairwise_stats_match_quadrature(self, reference_family):
        fam = reference_family
        for i, j in [(0, 1), (5, 900), (0, 32767)]:
            stats = pairwise_stats(fam, i, j)
            H = int(np.count_nonzero(fam.sigma(i) != fam.sigma(j)))
            assert stats.hamming == H
            dist = fam.distribution(i)
            eta_i, eta_j = fam.regression(i), fam.regression(j)
            l2 = integrate(dist, lambda X: (eta_i.evaluate(X) - eta_j.evaluate(X)) ** 2, resolution=1000)
            assert stats.l2_eta_sq == pytest.approx(l2, abs=QUAD_TOL)
            assert stats.l1_bayes == pytest.approx(2 * H * fam.w, abs=TOL)

    def test_pairwise_divergences_match_bernoulli(self, reference_family):
        fam = reference_family
        stats = pairwise_stats(fam, 0, 32767)
        p, q = (1 + fam.a) / 2, (1 - fam.a) / 2
        bern_p, bern_q = FiniteMeasure((p, 1 - p)), FiniteMeasure((q, 1 - q))
        assert stats.kl == pytest.approx(16 * fam.w * kl_divergence(bern_p, bern_q), rel=1e-10)
        assert stats.chi2 == pytest.approx(16 * fam.w * chi2_divergence(bern_p, bern_q), rel=1e-10)
        assert stats.kl <= stats.chi2 / 2

    def test_separation_constants(self, reference_family):
        gamma_sq, s = separation_constants(reference_family)
        assert gamma_sq == pytest.approx(0.5 * 0.2 ** 1.5)
        assert s == pytest.approx(0.125 * math.sqrt(0.2))

    def test_minimax_lower_bound(self, reference_family):
        gamma_sq, _ = separation_constants(reference_family)
        assert minimax_lower_bound(reference_family, 10) == pytest.approx(
            general_lower_bound(32768, 10, gamma_sq)
        )
        assert minimax_lower_bound(reference_family, 10) == pytest.approx(1 / 12)
        assert minimax_lower_bound(reference_family, 10**5) < 1e-100

    def test_delta_for_level(self):
        assert delta_for_level(0.0001, 1.0, 0.5, 0.25) == pytest.approx(0.2048)
        with pytest.raises(FamilyParameterError):
            delta_for_level(0.001, 1.0, 0.5, 0.25)

    def test_holder_q(self):
        assert holder_q(0.2, 1.0, 1.0, 1.0) == 3
        assert holder_q(0.25, 1.0, 0.5, 1.0) == 4
        assert holder_q(0.2, math.inf, 1.0, 2.0) == 2

    def test_maximal_separation_subset(self, reference_family):
        chosen = maximal_separation_subset(reference_family, 10)
        assert len(chosen) == len(set(chosen)) == 10
        assert chosen[:2] == [0, 32767]


class TestSampling:
    def test_deterministic_in_seed(self, reference_family):
        first = sample_dataset(reference_family, 4, 500, seed=77)
        second = sample_dataset(reference_family, 4, 500, seed=77)
        assert np.array_equal(first.X, second.X)
        assert np.array_equal(first.y, second.y)
        other = sample_dataset(reference_family, 4, 500, seed=78)
        assert not np.array_equal(first.X, other.X)
        assert first.provenance.seed == 77
        assert first.provenance.family_id == reference_family.family_id

    def test_points_avoid_the_ramps(self, reference_family):
        D = sample_dataset(reference_family, 0, 20_000, seed=5)
        _, local = reference_family.grid.locate(D.X)
        on_plateau = CellGrid.in_plateau(local)
        outside = ~CellGrid.in_support(local)
        assert np.all(on_plateau | outside)
        assert on_plateau.mean() == pytest.approx(reference_family.bw, abs=0.02)

    def test_labels_on_null_set_are_fair(self, reference_family):
        D = sample_dataset(reference_family, 0, 20_000, seed=6)
        _, local = reference_family.grid.locate(D.X)
        outside = ~CellGrid.in_support(local)
        assert D.y[outside].mean() == pytest.approx(0.5, abs=0.03)

    def test_null_sampler(self, reference_family):
        draw = sample_null_set(reference_family, 1000, np.random.default_rng(0))
        assert draw.points.shape == (1000, 1)
        _, local = reference_family.grid.locate(draw.points)
        assert not CellGrid.in_support(local).any()
        assert draw.accepted / draw.drawn == pytest.approx(0.25, abs=0.05)

    def test_rejects_empty(self, reference_family):
        with pytest.raises(ValueError):
            sample_dataset(reference_family, 0, 0, seed=1)


class _SquareRootCusp(RegressionFn):
    dimension = 1

    def __init__(self, scale):
        self.scale = scale

    def evaluate(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        return 0.5 + self.scale * np.sqrt(np.abs(X[:, 0] - 0.5))


class TestVerification:
    def test_reference_family_passes(self, reference_family):
        report = verify_family(reference_family)
        assert report.verdict, report.get_failure_analysis()
        assert report.metadata["C_M"] == pytest.approx(4.0)
        for name in ("eta_range", "code_separation", "pair_l2_bound", "pair_l1_bound", "margin_2_15"):
            assert report.get(name).passed

    def test_holder_seminorm(self, reference_family):
        loose = verify_family(reference_family, holder={"beta": 1.0, "L": 20.0})
        assert loose.get("holder_seminorm").passed
        tight = verify_family(reference_family, holder={"beta": 1.0, "L": 1.0})
        assert not tight.get("holder_seminorm").passed
        assert not tight.verdict

    def test_holder_seminorm_closed_form(self):
        # |sqrt(u) - sqrt(v)| <= sqrt(|u - v|), tight as one point reaches the cusp
        cusp = _SquareRootCusp(0.3)
        value = holder_seminorm(cusp, 1, 0.5, 50_000, np.random.default_rng(4))
        assert 0.9 * 0.3 <= value <= 0.3 * (1 + 1e-9)

    def test_holder_seminorm_finds_steepest_ramp(self, reference_family):
        rng = np.random.default_rng(6)
        seminorm = holder_seminorm(reference_family.regression(0), 1, 1.0, 20_000, rng, q=reference_family.q)
        # steepest ramp slope: half the amplitude, times c2, 8 q and the ramp's peak slope 2
        steepest = 0.5 * reference_family.amplitude_scale * reference_family.c2 * 8 * reference_family.q * 2
        assert 0.9 * steepest <= seminorm <= steepest * (1 + 1e-6)

    def test_smoother_classes_only_report_scaling(self, reference_family):
        report = verify_family(reference_family, holder={"beta": 2.0, "L": 1.0})
        check = report.get("holder_scaling")
        assert check.status.value == "info"
        assert check.lhs == pytest.approx(256 * math.sqrt(0.2))

    def test_target_constant_too_small(self, reference_family):
        from acbound.core_model import MarginSpec

        report = verify_family(reference_family, target_margin=MarginSpec(1.0, 2.0))
        assert not report.get("margin_constant").passed
        assert not report.get("margin_2_15").passed
