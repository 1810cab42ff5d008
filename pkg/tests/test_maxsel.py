import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import topsel as ts
from topsel.errors import NumericalError, ParameterError
from topsel.maxsel import _difference_moments


def test_top_p_select_basics():
    assert ts.top_p_select([3.0, 1.0, 2.0], 2).sorted_indices() == (0, 2)
    assert ts.top_p_select([1.0, 1.0, 0.0], 1).sorted_indices() == (0,)
    assert ts.top_p_select([5.0, 1.0], 2).sorted_indices() == (0, 1)
    with pytest.raises(ParameterError):
        ts.top_p_select([1.0, 2.0], 0)
    with pytest.raises(ParameterError):
        ts.top_p_select([1.0, 2.0], 3)


@settings(max_examples=60, deadline=None)
@given(
    z=st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=8),
    data=st.data(),
)
def test_top_p_select_equals_subset_sum_argmax(z, data):
    """The rule's set equals the argmax over all p-subsets of the reading sum."""
    p = data.draw(st.integers(1, len(z)))
    got = set(ts.top_p_select(z, p).indices)
    best, best_set = -math.inf, None
    for comb in itertools.combinations(range(len(z)), p):
        val = sum(z[i] for i in comb)
        if val > best + 1e-12:
            best, best_set = val, set(comb)
    assert sum(z[i] for i in got) == pytest.approx(best, abs=1e-9)
    if best_set is not None and all(
        abs(z[i] - z[j]) > 1e-9 for i in range(len(z)) for j in range(i + 1, len(z))
    ):
        assert got == best_set


def make_problem(dmap, grid, sigma, p):
    return ts.TopPProblem(dmap, grid, sigma, p, check_separation=False)


def test_problem_validation(small_problem):
    dmap, grid = small_problem
    with pytest.raises(ParameterError):
        make_problem(dmap, grid, 0.5, 0)
    with pytest.raises(ParameterError):
        make_problem(dmap, grid, 0.5, dmap.s + 1)
    with pytest.raises(ParameterError):
        make_problem(dmap, grid, [0.5, 0.5], 1)  # wrong length
    with pytest.raises(ParameterError):
        make_problem(dmap, grid, -0.1, 1)


def test_problem_means_and_answer_sets(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    means = pr.means()
    assert means.shape == (grid.n, dmap.s)
    h = grid.nearest_index(ts.Location(0.5, 0.5))
    d = ts.geometry.floored_distances(grid.points_xy()[h : h + 1], dmap.sensor_xy())[0]
    np.testing.assert_allclose(means[h], -10.0 * np.log10(d))
    mask = pr.answer_mask()
    assert mask.shape == (grid.n, dmap.s)
    assert mask.sum(axis=1).tolist() == [2] * grid.n
    # center point: sensor 4 sits on it, closest by construction
    assert mask[h, 4]


def test_conditional_correct_near_certain_when_noise_vanishes():
    area = ts.Rect(0.0, 0.0, 1.0, 1.0)
    dmap = ts.DeploymentMap((ts.Location(0.0, 0.0), ts.Location(1.0, 0.0)), area)
    grid = ts.HypothesisGrid(ts.Location(0.01, 0.0), 1.0, rows=1, cols=1)
    pr = ts.TopPProblem(dmap, grid, 1e-6, 1, check_separation=False)
    val = ts.conditional_correct_quadrature(pr, ts.Location(0.01, 0.0))
    assert val >= 1.0 - 1e-9


def test_error_prob_p_equals_s_is_zero(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 1.0, dmap.s)
    rep = ts.error_prob_quadrature(pr)
    assert rep.p_error == 0.0
    assert np.all(rep.per_hypothesis == 1.0)
    mc = ts.empirical_error(pr, 10_000, seed=1)
    assert mc.p_error == 0.0


def test_error_prob_single_hypothesis_degenerate_average(small_problem):
    dmap, _ = small_problem
    grid1 = ts.HypothesisGrid(ts.Location(0.3, 0.4), 1.0, rows=1, cols=1)
    pr = ts.TopPProblem(dmap, grid1, 0.5, 2, check_separation=False)
    rep = ts.error_prob_quadrature(pr)
    cond = ts.conditional_correct_quadrature(pr, ts.Location(0.3, 0.4))
    assert rep.p_error == pytest.approx(1.0 - cond, abs=1e-12)


def test_quadrature_methods_cross_agree(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    quad = ts.error_prob_quadrature(pr)
    emp = ts.empirical_error(pr, 400_000, seed=7)
    orth = ts.error_prob_orthant_mc(pr, 100_000, seed=7)
    assert quad.uncertainty <= 1e-8
    assert abs(quad.p_error - emp.p_error) <= 3.0 * emp.uncertainty
    assert abs(quad.p_error - orth.p_error) <= 3.0 * orth.uncertainty


def test_quadrature_regression_value(small_problem):
    # frozen against this package's own earlier runs and an independent
    # scipy.integrate evaluation of the same integrand
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    rep = ts.error_prob_quadrature(pr)
    assert rep.p_error == pytest.approx(0.18981320236527455, abs=1e-9)


def test_sigma_scaling_never_helps(small_problem):
    dmap, grid = small_problem
    base = ts.error_prob_quadrature(make_problem(dmap, grid, 0.4, 2)).p_error
    for c in (2.0, 4.0):
        worse = ts.error_prob_quadrature(make_problem(dmap, grid, 0.4 * c, 2)).p_error
        assert worse >= base - 1e-9
        base = worse


def test_per_sensor_sigma_vector(small_problem):
    dmap, grid = small_problem
    sig = np.array([0.3, 0.5, 0.7, 0.9, 1.1])
    pr = ts.TopPProblem(dmap, grid, sig, 2, check_separation=False)
    rep = ts.error_prob_quadrature(pr)
    emp = ts.empirical_error(pr, 300_000, seed=3)
    assert abs(rep.p_error - emp.p_error) <= 3.0 * emp.uncertainty


class TestDifferenceMoments:
    def test_covariance_entries_match_formula(self, small_problem):
        dmap, grid = small_problem
        sig = np.array([0.3, 0.5, 0.7, 0.9, 1.1])
        pr = ts.TopPProblem(dmap, grid, sig, 2, check_separation=False)
        h = 17
        mean, cov, pairs = ts.difference_moments(pr, h)
        s2 = np.asarray(pr.sigma_tilde) ** 2
        k = len(pairs)
        assert mean.shape == (k,) and cov.shape == (k, k)
        mu = pr.means()[h]
        for a, (i, j) in enumerate(pairs):
            assert mean[a] == pytest.approx(mu[i] - mu[j], rel=1e-12)
            for b, (i2, j2) in enumerate(pairs):
                want = (
                    s2[i] * (i == i2)
                    + s2[j] * (j == j2)
                    - s2[i] * (i == j2)
                    - s2[j] * (j == i2)
                )
                assert cov[a, b] == pytest.approx(want, abs=1e-14)

    def test_pair_order_row_major_k_then_complement(self, small_problem):
        dmap, grid = small_problem
        pr = make_problem(dmap, grid, 0.5, 2)
        _, _, pairs = ts.difference_moments(pr, 0)
        kset = sorted({i for i, _ in pairs})
        comp = sorted({j for _, j in pairs})
        want = [(i, j) for i in kset for j in comp]
        assert list(pairs) == want

    def test_dual_construction_identity(self, small_problem):
        # indicator formula vs A diag A^T, checked to 1e-12 internally;
        # verify directly too
        dmap, grid = small_problem
        sig = np.array([0.25, 0.4, 0.55, 0.7, 0.85])
        pr = ts.TopPProblem(dmap, grid, sig, 3, check_separation=False)
        for h in range(0, grid.n, 7):
            mean, cov, pairs = ts.difference_moments(pr, h)
            s = dmap.s
            A = np.zeros((len(pairs), s))
            for a, (i, j) in enumerate(pairs):
                A[a, i] = 1.0
                A[a, j] = -1.0
            want = A @ np.diag(np.asarray(pr.sigma_tilde) ** 2) @ A.T
            assert np.max(np.abs(cov - want)) <= 1e-12


def test_orthant_mc_matches_quadrature_small(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.8, 3)
    quad = ts.error_prob_quadrature(pr)
    orth = ts.error_prob_orthant_mc(pr, 200_000, seed=11)
    assert abs(quad.p_error - orth.p_error) <= 3.0 * orth.uncertainty
    assert orth.n_trials == 200_000
    assert orth.method == "orthant-mc"


def test_trials_floor_enforced(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    with pytest.raises(ParameterError):
        ts.error_prob_orthant_mc(pr, 9_999, seed=1)
    with pytest.raises(ParameterError):
        ts.empirical_error(pr, 100, seed=1)


def test_empirical_error_deterministic(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    a = ts.empirical_error(pr, 50_000, seed=21)
    b = ts.empirical_error(pr, 50_000, seed=21)
    assert a.p_error == b.p_error
    c = ts.empirical_error(pr, 50_000, seed=22)
    assert a.p_error != c.p_error


def strict_zero_noise_oracle(pr):
    """With no noise, the strict-separation event fails exactly when the
    answer boundary has a floored-mean tie (min answer mean not strictly
    above the rest)."""
    means, mask = pr.means(), pr.answer_mask()
    wrong = 0
    for h in range(pr.n_hypotheses):
        u = means[h][mask[h]].min()
        v = means[h][~mask[h]].max()
        wrong += u <= v
    return wrong / pr.n_hypotheses


def rule_zero_noise_oracle(pr):
    """With no noise the selection rule is a pure argsort of the means with
    index tie-break, so simulate it directly per hypothesis."""
    means, mask = pr.means(), pr.answer_mask()
    wrong = 0
    for h in range(pr.n_hypotheses):
        chosen = ts.top_p_select(means[h], pr.p)
        wrong += set(chosen.indices) != set(np.flatnonzero(mask[h]))
    return wrong / pr.n_hypotheses


def test_empirical_error_zero_noise(small_problem):
    # symmetric layout: every mean tie comes from a raw distance tie, and
    # both sides break ties toward the lower index, so the rule stays
    # correct even though strict separation fails on the midlines
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.0, 2)
    assert strict_zero_noise_oracle(pr) > 0.0
    assert rule_zero_noise_oracle(pr) == 0.0
    rep = ts.empirical_error(pr, 10_000, seed=4)
    assert rep.p_error == 0.0


def test_empirical_error_zero_noise_generic_layout():
    # no symmetry, no mean ties: zero noise must always select correctly
    rng = np.random.default_rng(12)
    area = ts.Rect(0.0, 0.0, 50.0, 50.0)
    dmap = ts.DeploymentMap(
        tuple(ts.Location(*rng.uniform(0.0, 50.0, 2)) for _ in range(8)), area
    )
    grid = ts.grid_covering(area, 6, 6)
    pr = ts.TopPProblem(dmap, grid, 0.0, 3, check_separation=False)
    assert strict_zero_noise_oracle(pr) == 0.0
    assert ts.empirical_error(pr, 10_000, seed=4).p_error == 0.0


def test_deterministic_sensor_quadrature_path(small_problem):
    """sigma below the deterministic threshold pins that sensor's reading to
    its mean; the integral handles the mixed case analytically."""
    dmap, grid = small_problem
    sig = np.array([1e-9, 0.5, 0.5, 0.5, 1e-9])
    pr = ts.TopPProblem(dmap, grid, sig, 2, check_separation=False)
    quad = ts.error_prob_quadrature(pr)
    emp = ts.empirical_error(pr, 400_000, seed=9)
    assert abs(quad.p_error - emp.p_error) <= 3.0 * max(emp.uncertainty, 1e-12)


def test_all_deterministic_is_exact(small_problem):
    # quadrature scores strict separation, so the symmetric midline
    # hypotheses count as certain failures at p=3
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.0, 3)
    rep = ts.error_prob_quadrature(pr)
    assert rep.p_error == pytest.approx(strict_zero_noise_oracle(pr), abs=1e-12)
    assert rep.uncertainty == 0.0


def test_error_probability_dispatcher(small_problem):
    dmap, grid = small_problem
    pr = make_problem(dmap, grid, 0.5, 2)
    r1 = ts.error_probability(pr, method="quadrature")
    assert r1.method == "quadrature"
    r2 = ts.error_probability(pr, method="orthant-mc", trials=20_000, seed=1)
    assert r2.method == "orthant-mc"
    r3 = ts.error_probability(pr, method="empirical-mc", trials=20_000, seed=1)
    assert r3.method == "empirical-mc"
    with pytest.raises(ParameterError):
        ts.error_probability(pr, method="nope")


def test_report_bounds(small_problem):
    dmap, grid = small_problem
    for p in (1, 3, 5):
        rep = ts.error_prob_quadrature(make_problem(dmap, grid, 1.5, p))
        assert 0.0 <= rep.p_error <= 1.0
        assert np.all((rep.per_hypothesis >= 0.0) & (rep.per_hypothesis <= 1.0))
