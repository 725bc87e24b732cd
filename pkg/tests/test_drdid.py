from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.domain.errors import (
    BootstrapError,
    CollinearityError,
    DesignError,
    EstimationError,
    OverlapError,
    SeparationError,
)
from app.domain.options import Comparison, CovariateMode, Method
from app.domain.panel import PanelDataset
from app.domain.schemas import CovariateModel, CovariateSpec, EstimationOptions, GroupTimeResult
from app.services.drdid.aggregate import (
    aggregate_event_study,
    aggregate_overall,
    aggregate_vector,
    overall_weights,
)
from app.services.drdid.attgt import (
    INTERCEPT_ONLY,
    aipw_implicit_weights,
    att_gt_aipw,
    att_gt_ipw,
    att_gt_ra,
    cell_masks,
    cell_plan,
    estimate_att_gt,
    implicit_weight_reports,
    two_period_aipw,
)
from app.services.drdid.bootstrap import bootstrap_se
from app.services.drdid.design import covariate_column, design_labels
from app.services.oracle.dgp import enumerate_population, load_dgp, simulate_sample
from app.services.oracle.truth import truth_att
from app.services.panel.transforms import two_period_view
from tests.conftest import make_staggered_panel, make_two_period_panel

SPEC = CovariateSpec()
POPULATION = EstimationOptions(min_group_size=2)


# ---------- Implicit weights ----------

@pytest.mark.parametrize("method", [Method.AIPW, Method.RA, Method.IPW])
@pytest.mark.parametrize("weighted", [False, True])
def test_comparison_weights_balance_the_design(method, weighted):
    data = make_two_period_panel(21, n=400, weighted=weighted)
    rep = aipw_implicit_weights(data, SPEC, 2, 2, method=method)
    assert_allclose(rep.balance_gap(data.sample_weight), 0.0, atol=1e-9)
    # the intercept row says the comparison weights average to one
    assert np.average(rep.comparison_weights, weights=data.sample_weight[rep.comparison_idx]) == pytest.approx(1.0)


@pytest.mark.parametrize("method", [Method.AIPW, Method.RA, Method.IPW])
def test_implicit_weights_reproduce_the_estimate(method):
    data = make_two_period_panel(22, n=400, weighted=True)
    rep = aipw_implicit_weights(data, SPEC, 2, 2, method=method)
    dy = data.outcome[:, 1] - data.outcome[:, 0]
    sw = data.sample_weight
    treated = np.average(dy[rep.target_idx], weights=sw[rep.target_idx])
    comparison = np.average(rep.comparison_weights * dy[rep.comparison_idx], weights=sw[rep.comparison_idx])
    assert treated - comparison == pytest.approx(rep.estimate, abs=1e-9)


def test_staggered_cells_balance_their_own_design(staggered_panel):
    for rep in implicit_weight_reports(staggered_panel, SPEC):
        assert rep.t >= rep.g
        assert_allclose(rep.balance_gap(staggered_panel.sample_weight), 0.0, atol=1e-9)


def test_implicit_weights_need_no_outcome():
    data = make_two_period_panel(23, outcome=False)
    rep = aipw_implicit_weights(data, SPEC, 2, 2)
    assert rep.estimate is None
    assert_allclose(rep.balance_gap(data.sample_weight), 0.0, atol=1e-9)
    with pytest.raises(EstimationError):
        att_gt_aipw(data, SPEC, 2, 2)


# ---------- Estimator reductions ----------

@pytest.mark.parametrize("seed", [31, 32, 33])
def test_intercept_only_propensity_reduces_to_regression_adjustment(seed):
    data = make_two_period_panel(seed, weighted=True)
    aipw = att_gt_aipw(data, CovariateSpec(propensity=INTERCEPT_ONLY), 2, 2)
    ra = att_gt_ra(data, SPEC, 2, 2)
    assert aipw.att == pytest.approx(ra.att, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", [31, 32, 33])
def test_intercept_only_outcome_model_reduces_to_ipw(seed):
    data = make_two_period_panel(seed, weighted=True)
    aipw = att_gt_aipw(data, CovariateSpec(outcome=INTERCEPT_ONLY), 2, 2)
    ipw = att_gt_ipw(data, SPEC, 2, 2)
    assert aipw.att == pytest.approx(ipw.att, rel=1e-9, abs=1e-12)


def test_two_period_view_matches_panel_estimate(two_period_panel):
    estimate, rep = two_period_aipw(two_period_view(two_period_panel, 2), SPEC)
    assert estimate == pytest.approx(att_gt_aipw(two_period_panel, SPEC, 2, 2).att, rel=1e-10)
    assert rep.n_treated + rep.n_comparison == two_period_panel.n


def test_result_carries_cell_metadata(two_period_panel):
    r = att_gt_aipw(two_period_panel, SPEC, 2, 2)
    assert (r.g, r.t, r.event_time, r.base_period) == (2, 2, 0, 1)
    assert r.estimator == Method.AIPW
    assert r.n_treated == int(np.sum(two_period_panel.group == 2))
    assert 0 < r.max_pscore < 1
    assert not r.fallback


# ---------- Consistency ----------

def test_no_effect_panel_is_near_zero(fixtures_dir):
    data = simulate_sample(load_dgp(fixtures_dir / "flat.json"), 2000, seed=5)
    r = att_gt_aipw(data, SPEC, 2, 2)
    assert abs(r.att) < 0.25


def test_level_dependent_trend_recovered_with_base_level_covariates(fixtures_dir):
    dgp = load_dgp(fixtures_dir / "hidden_linearity_level.json")
    spec = CovariateSpec(mode=CovariateMode.BASE_LEVEL, include_ti=False)

    population = enumerate_population(dgp).as_panel()
    assert att_gt_aipw(population, spec, 2, 2, POPULATION).att == pytest.approx(1.0, abs=1e-8)

    sample = simulate_sample(dgp, 2000, seed=8)
    assert abs(att_gt_aipw(sample, spec, 2, 2).att - 1.0) < 0.25


def test_population_cells_match_truth(fixtures_dir):
    dgp = load_dgp(fixtures_dir / "staggered_3g.json")
    population = enumerate_population(dgp).as_panel()
    truth = truth_att(dgp)
    results = estimate_att_gt(population, SPEC, POPULATION)
    for r in results:
        if r.post:
            assert r.att == pytest.approx(truth.att_gt[(r.g, r.t)], abs=1e-8)
        else:
            assert r.att == pytest.approx(0.0, abs=1e-8)
    assert aggregate_overall(results, population).values[0].estimate == pytest.approx(truth.overall, abs=1e-8)


@pytest.mark.slow
def test_staggered_sample_overall_near_truth(fixtures_dir):
    dgp = load_dgp(fixtures_dir / "staggered_3g.json")
    data = simulate_sample(dgp, 3000, seed=17)
    results = estimate_att_gt(data, SPEC)
    est = aggregate_overall(results, data).values[0].estimate
    assert abs(est - truth_att(dgp).overall) < 0.35


def test_constant_covariate_is_reported_as_collinear(fixtures_dir):
    population = enumerate_population(load_dgp(fixtures_dir / "hidden_linearity_z.json")).as_panel()
    with pytest.raises(CollinearityError) as err:
        att_gt_aipw(population, SPEC, 2, 2, POPULATION)
    assert "base.x" in err.value.columns
    r = att_gt_aipw(population, CovariateSpec(mode=CovariateMode.DELTA_ONLY), 2, 2, POPULATION)
    assert r.att == pytest.approx(1.0, abs=1e-8)


# ---------- Cells and comparison groups ----------

def _three_cohorts(seed: int = 41, n: int = 500):
    return make_staggered_panel(seed, n=n, T=4, n_groups=3)


def test_cell_plan_with_and_without_pre_periods():
    data = _three_cohorts()
    post = cell_plan(data, EstimationOptions(pre_periods=False))
    assert sorted(post) == [(2, 2), (2, 3), (2, 4), (3, 3), (3, 4), (4, 4)]
    full = cell_plan(data, EstimationOptions())
    assert sorted(set(full) - set(post)) == [(3, 1), (4, 1), (4, 2)]


def test_anticipation_shifts_the_base_period():
    data = _three_cohorts()
    cells = cell_plan(data, EstimationOptions(anticipation=1))
    assert sorted(cells) == [(3, 2), (3, 3), (3, 4), (4, 1), (4, 3), (4, 4)]
    base, _, _ = cell_masks(data, 4, 4, EstimationOptions(anticipation=1))
    assert base == 2
    with pytest.raises(EstimationError):
        cell_masks(data, 2, 2, EstimationOptions(anticipation=1))


def test_not_yet_treated_comparison_grows_the_pool():
    data = _three_cohorts()
    opts = EstimationOptions(comparison=Comparison.NOT_YET_TREATED)
    _, _, early = cell_masks(data, 2, 2, opts)
    _, _, late = cell_masks(data, 2, 4, opts)
    _, _, never = cell_masks(data, 2, 2, EstimationOptions())
    assert early.sum() == np.sum(data.group >= 3)
    assert late.sum() == never.sum() == np.sum(data.never_treated)

    results = estimate_att_gt(data, SPEC, opts)
    assert all(r.comparison == Comparison.NOT_YET_TREATED for r in results)


def test_small_group_falls_back_to_regression_adjustment():
    data = _three_cohorts(n=400)
    g2 = np.flatnonzero(data.group == 2)
    keep = np.sort(np.concatenate([np.flatnonzero(data.group != 2), g2[:3]]))
    small = data.take(keep)
    aipw = att_gt_aipw(small, SPEC, 2, 3)
    assert aipw.fallback
    assert aipw.att == pytest.approx(att_gt_ra(small, SPEC, 2, 3).att, rel=1e-10)
    assert not att_gt_aipw(small, SPEC, 3, 3).fallback


def test_threads_do_not_change_results(staggered_panel):
    serial = estimate_att_gt(staggered_panel, SPEC, EstimationOptions(threads=1))
    parallel = estimate_att_gt(staggered_panel, SPEC, EstimationOptions(threads=4))
    assert [(r.g, r.t) for r in serial] == [(r.g, r.t) for r in parallel]
    assert_allclose([r.att for r in serial], [r.att for r in parallel], rtol=1e-12)


def test_twfe_is_not_a_cell_estimator(staggered_panel):
    with pytest.raises(ValueError):
        estimate_att_gt(staggered_panel, SPEC, method=Method.TWFE)


# ---------- Design labels ----------

def test_design_labels_per_mode(staggered_panel):
    def labels(**kw):
        return design_labels(staggered_panel, CovariateModel(**kw))

    assert labels(mode=CovariateMode.NONE) == []
    assert labels(mode=CovariateMode.DELTA_ONLY) == ["d.x0", "z"]
    assert labels(mode=CovariateMode.BASE_LEVEL, include_ti=False) == ["base.x0"]
    assert labels() == ["d.x0", "base.x0", "z"]
    assert labels(mode=CovariateMode.AVERAGE) == ["avg.x0", "z"]
    assert labels(mode=CovariateMode.FULL_HISTORY, include_ti=False) == ["x0@1", "x0@2", "x0@3", "x0@4"]
    assert labels(mode=CovariateMode.DELTA_ONLY, interactions=[("d.x0", "z")])[-1] == "d.x0*z"


def test_covariate_label_language(staggered_panel):
    data = staggered_panel
    x = data.tv[:, :, 0]
    z = data.ti[:, 0]
    assert_allclose(covariate_column(data, "d.x0", 3, 1), x[:, 2] - x[:, 0])
    assert_allclose(covariate_column(data, "base.x0", 3, 1), x[:, 0])
    assert_allclose(covariate_column(data, "post.x0", 3, 1), x[:, 2])
    assert_allclose(covariate_column(data, "avg.x0", 3, 1), x.mean(axis=1))
    assert_allclose(covariate_column(data, "x0@2", 3, 1), x[:, 1])
    assert_allclose(covariate_column(data, "ind.z=1", 3, 1), (z == 1).astype(float))
    assert_allclose(covariate_column(data, "base.x0*z", 3, 1), x[:, 0] * z)


@pytest.mark.parametrize("label", ["x0", "nope", "ind.z", "ind.z=yes", "x0@9", "d.nope"])
def test_bad_covariate_labels(staggered_panel, label):
    with pytest.raises(DesignError):
        covariate_column(staggered_panel, label, 3, 1)


# ---------- Aggregation ----------

def _result(g: int, t: int, att: float) -> GroupTimeResult:
    return GroupTimeResult(
        g=g, t=t, event_time=t - g, att=att, estimator=Method.AIPW, comparison=Comparison.NEVER_TREATED,
        base_period=g - 1, n_treated=10, n_comparison=10, post=t >= g,
    )


def test_constant_effect_aggregates_to_itself():
    data = _three_cohorts()
    results = [_result(g, t, 2.0 if t >= g else 0.0) for g, t in cell_plan(data, EstimationOptions())]

    weights = overall_weights(results, data)
    assert sum(weights.values()) == pytest.approx(1.0)
    assert aggregate_overall(results, data).values[0].estimate == pytest.approx(2.0)

    study = {v.label: v.estimate for v in aggregate_event_study(results, data).values}
    assert sorted(study, key=int) == ["-3", "-2", "0", "1", "2"]
    assert all(study[e] == pytest.approx(2.0) for e in ("0", "1", "2"))
    assert all(study[e] == pytest.approx(0.0) for e in ("-3", "-2"))
    assert aggregate_vector(results, data).shape == (len(results) + 1 + len(study),)


def test_overall_weights_follow_group_shares():
    data = _three_cohorts()
    results = [_result(g, t, 0.0) for g, t in cell_plan(data, EstimationOptions(pre_periods=False))]
    weights = overall_weights(results, data)
    treated = data.group <= data.T
    for g in (2, 3, 4):
        share = np.sum(data.group == g) / np.sum(treated)
        assert weights[(g, g)] == pytest.approx(share / (data.T - g + 1))


def test_missing_post_cell_blocks_aggregation():
    data = _three_cohorts()
    results = [_result(g, t, 1.0) for g, t in cell_plan(data, EstimationOptions()) if (g, t) != (2, 3)]
    with pytest.raises(EstimationError):
        aggregate_overall(results, data)


# ---------- Bootstrap ----------

def _last_period_mean(d):
    return np.array([np.average(d.outcome[:, -1], weights=d.sample_weight), d.outcome[:, 0].mean()])


def test_bootstrap_is_deterministic_per_seed(staggered_panel):
    a = bootstrap_se(_last_period_mean, staggered_panel, reps=30, seed=4)
    b = bootstrap_se(_last_period_mean, staggered_panel, reps=30, seed=4, threads=4)
    c = bootstrap_se(_last_period_mean, staggered_panel, reps=30, seed=5)
    assert_allclose(a.se, b.se, rtol=1e-12)
    assert not np.allclose(a.se, c.se)
    assert a.failures == 0
    assert a.draws.shape == (30, 2)


def test_bootstrap_needs_two_reps(staggered_panel):
    with pytest.raises(ValueError):
        bootstrap_se(_last_period_mean, staggered_panel, reps=1, seed=0)


def test_bootstrap_se_of_a_mean_is_close_to_analytic(staggered_panel):
    data = replace(staggered_panel, sample_weight=np.ones(staggered_panel.n))
    boot = bootstrap_se(_last_period_mean, data, reps=400, seed=2)
    analytic = data.outcome[:, -1].std(ddof=1) / np.sqrt(data.n)
    assert boot.se[0] == pytest.approx(analytic, rel=0.2)


# ---------- Worked cases ----------

@pytest.mark.parametrize("method", [att_gt_aipw, att_gt_ra, att_gt_ipw])
def test_intercept_only_models_give_the_plain_two_by_two(two_period_panel, method):
    spec = CovariateSpec(mode=CovariateMode.NONE, include_ti=False)
    view = two_period_view(two_period_panel, 2)
    treated = view.treat == 1
    w = view.sample_weight
    plain = np.average(view.dY[treated], weights=w[treated]) - np.average(view.dY[~treated], weights=w[~treated])
    assert method(two_period_panel, spec, 2, 2).att == pytest.approx(plain, rel=1e-9, abs=1e-12)


def test_duplicating_units_leaves_the_estimate_unchanged(two_period_panel):
    doubled = two_period_panel.take(np.repeat(np.arange(two_period_panel.n), 2))
    assert att_gt_aipw(doubled, SPEC, 2, 2).att == pytest.approx(att_gt_aipw(two_period_panel, SPEC, 2, 2).att, rel=1e-7)


def test_equal_cohorts_split_overall_weights_by_exposure():
    data = make_staggered_panel(0, n=60, T=3, n_groups=2)
    data = replace(data, group=np.resize([2, 3, 4], data.n), sample_weight=np.ones(data.n))
    results = [_result(g, t, 0.0) for g, t in cell_plan(data, EstimationOptions(pre_periods=False))]
    weights = overall_weights(results, data)
    assert weights == pytest.approx({(2, 2): 0.25, (2, 3): 0.25, (3, 3): 0.5})


def test_bootstrap_of_a_constant_outcome_has_zero_se(staggered_panel):
    data = replace(staggered_panel, outcome=np.full(staggered_panel.outcome.shape, 3.0))
    boot = bootstrap_se(_last_period_mean, data, reps=20, seed=1)
    assert_allclose(boot.se, 0.0, atol=1e-12)


# ---------- Propensity failures ----------

BASE_X = CovariateSpec(mode=CovariateMode.BASE_LEVEL, include_ti=False)


def _one_covariate_panel(x: np.ndarray, treated: np.ndarray, seed: int = 0) -> PanelDataset:
    rng = np.random.default_rng(seed)
    n = len(x)
    y0 = rng.normal(size=n)
    y1 = y0 + rng.normal(size=n) + treated
    return PanelDataset(
        unit_ids=tuple(f"u{i}" for i in range(n)),
        periods=(1, 2),
        outcome=np.column_stack([y0, y1]),
        group=np.where(treated, 2, 3).astype(int),
        tv=np.repeat(np.asarray(x, dtype=float)[:, None, None], 2, axis=1),
        tv_names=("x",),
        ti=np.zeros((n, 0)),
        ti_names=(),
        sample_weight=np.ones(n),
    )


def _logistic_sample(seed: int, n: int = 400):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2, 2, size=n)
    treated = rng.random(n) < 1.0 / (1.0 + np.exp(-2.0 * x))
    return x, treated


def test_trimming_drops_extreme_comparison_units_only():
    x, treated = _logistic_sample(3)
    x = np.append(x, 6.0)
    treated = np.append(treated, False)
    data = _one_covariate_panel(x, treated)
    outlier = data.n - 1

    rep = aipw_implicit_weights(data, BASE_X, 2, 2, EstimationOptions(trim=True))
    assert rep.trimmed_comparison == 1
    assert outlier not in rep.comparison_idx
    assert rep.n_comparison == int(np.sum(~treated)) - 1
    assert rep.n_treated == int(np.sum(treated))

    trimmed = att_gt_aipw(data, BASE_X, 2, 2, EstimationOptions(trim=True))
    assert trimmed.trimmed_comparison == 1
    without = data.take(np.arange(data.n - 1))
    assert trimmed.att == pytest.approx(att_gt_aipw(without, BASE_X, 2, 2).att, rel=1e-9, abs=1e-12)


def test_propensity_near_one_is_an_overlap_error():
    x, treated = _logistic_sample(4)
    data = _one_covariate_panel(np.append(x, 60.0), np.append(treated, True))
    with pytest.raises(OverlapError):
        att_gt_aipw(data, BASE_X, 2, 2)
    with pytest.raises(OverlapError):
        att_gt_ipw(data, BASE_X, 2, 2)
    # treated units are never trimmed, so trimming only lifts the check
    res = att_gt_aipw(data, BASE_X, 2, 2, EstimationOptions(trim=True))
    assert res.trimmed_comparison == 0
    assert res.max_pscore >= 1 - 1e-6
    assert np.isfinite(att_gt_ra(data, BASE_X, 2, 2).att)


def test_perfect_separation_is_reported():
    x = np.linspace(-2, 2, 400)
    data = _one_covariate_panel(x, x > 0)
    with pytest.raises(SeparationError):
        att_gt_aipw(data, BASE_X, 2, 2)
    with pytest.raises(EstimationError):
        att_gt_ipw(data, BASE_X, 2, 2)
    assert np.isfinite(att_gt_ra(data, BASE_X, 2, 2).att)
    assert np.isfinite(att_gt_aipw(data, BASE_X, 2, 2, EstimationOptions(ridge=1.0)).att)


def test_small_comparison_group_falls_back_to_regression_adjustment():
    rng = np.random.default_rng(6)
    x = rng.uniform(-2, 2, size=204)
    treated = np.arange(204) >= 4
    data = _one_covariate_panel(x, treated)
    aipw = att_gt_aipw(data, BASE_X, 2, 2)
    assert aipw.fallback
    assert aipw.n_comparison == 4
    assert aipw.att == pytest.approx(att_gt_ra(data, BASE_X, 2, 2).att, rel=1e-10)
    assert att_gt_ipw(data, BASE_X, 2, 2).fallback
    assert not att_gt_aipw(data, BASE_X, 2, 2, EstimationOptions(min_group_size=4)).fallback


def test_bootstrap_that_keeps_failing_raises(staggered_panel):
    def broken(d):
        raise EstimationError("no estimate")

    with pytest.raises(BootstrapError):
        bootstrap_se(broken, staggered_panel, reps=10, seed=0, size=2)


def test_bootstrap_tolerates_a_minority_of_failed_reps(staggered_panel):
    def sometimes(d):
        if d.outcome[0, 0] > np.quantile(staggered_panel.outcome[:, 0], 0.7):
            return np.array([np.nan, 0.0])
        return _last_period_mean(d)

    boot = bootstrap_se(sometimes, staggered_panel, reps=40, seed=3, size=2)
    assert 0 < boot.failures <= 20
    assert boot.draws.shape == (40 - boot.failures, 2)


# ---------- Monte Carlo ----------

MC_REPS = 500
MC_N = 2000


def _quadratic_trend_panel(seed: int, n: int = MC_N) -> PanelDataset:
    """Selection linear in x on the logit scale; untreated trend quadratic in x; effect 1."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    treated = rng.random(n) < 1.0 / (1.0 + np.exp(-(-0.3 + 0.8 * x)))
    y0 = x + rng.normal(size=n)
    y1 = y0 + 1.0 + x + 1.5 * x ** 2 + rng.normal(size=n) + treated
    return PanelDataset(
        unit_ids=tuple(f"m{i}" for i in range(n)),
        periods=(1, 2),
        outcome=np.column_stack([y0, y1]),
        group=np.where(treated, 2, 3).astype(int),
        tv=np.repeat(x[:, None, None], 2, axis=1),
        tv_names=("x",),
        ti=np.zeros((n, 0)),
        ti_names=(),
        sample_weight=np.ones(n),
    )


def _mc_summary(estimates, truth: float):
    estimates = np.asarray(estimates)
    return float(estimates.mean() - truth), float(estimates.std(ddof=1) / np.sqrt(len(estimates)))


LINEAR = CovariateModel(mode=CovariateMode.BASE_LEVEL, include_ti=False)
QUADRATIC = CovariateModel(mode=CovariateMode.BASE_LEVEL, include_ti=False, interactions=[("base.x", "base.x")])


@pytest.mark.slow
def test_aipw_is_doubly_robust_and_regression_adjustment_is_not():
    right_outcome = CovariateSpec(mode=CovariateMode.BASE_LEVEL, include_ti=False, outcome=QUADRATIC, propensity=INTERCEPT_ONLY)
    right_propensity = CovariateSpec(mode=CovariateMode.BASE_LEVEL, include_ti=False, outcome=LINEAR, propensity=LINEAR)
    aipw_a, aipw_b, ra = [], [], []
    for r in range(MC_REPS):
        data = _quadratic_trend_panel(1000 + r)
        aipw_a.append(att_gt_aipw(data, right_outcome, 2, 2).att)
        aipw_b.append(att_gt_aipw(data, right_propensity, 2, 2).att)
        ra.append(att_gt_ra(data, right_propensity, 2, 2).att)

    bias, mcse = _mc_summary(aipw_a, 1.0)
    assert abs(bias) < 3 * mcse
    bias, mcse = _mc_summary(aipw_b, 1.0)
    assert abs(bias) < 3 * mcse
    bias, mcse = _mc_summary(ra, 1.0)
    assert abs(bias) > 3 * mcse


@pytest.mark.slow
def test_base_level_aipw_removes_hidden_linearity_bias(fixtures_dir):
    dgp = load_dgp(fixtures_dir / "hidden_linearity_level.json")
    spec = CovariateSpec(mode=CovariateMode.BASE_LEVEL, include_ti=False)
    truth = truth_att(dgp).att
    estimates = [att_gt_aipw(simulate_sample(dgp, MC_N, seed=r), spec, 2, 2).att for r in range(MC_REPS)]
    bias, mcse = _mc_summary(estimates, truth)
    assert abs(bias) < 3 * mcse
