import concurrent.futures
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.domain.errors import EmptyStratumError, EstimationError, OverlapError
from app.domain.options import Comparison, CovariateMode, Method
from app.domain.panel import PanelDataset, TwoPeriodView
from app.domain.schemas import CovariateModel, CovariateSpec, EstimationOptions, GroupTimeResult
from app.services.drdid.design import build_design, design_labels
from app.services.numcore.logit import logit_fit
from app.services.numcore.projection import linear_projection
from app.utils.logging import get_logger

logger = get_logger(__name__)

OVERLAP_TOL = 1e-6
TRIM_LEVEL = 1e-3
MIN_PS_GROUP = 5

INTERCEPT_ONLY = CovariateModel(mode=CovariateMode.NONE, include_ti=False)


@dataclass
class AipwWeightReport:
    """
    Implicit weights of an AIPW-type estimate for one (g, t) cell, internal period indices.

    theta1 is 1 on every target unit. theta0 on comparison units is the normalized odds plus a
    projection correction, and reproduces the estimate as
    E_T[dY] - E_C[theta0 dY] with sampling-weighted means.
    """
    g: int
    t: int
    base: int
    method: Method
    target_idx: np.ndarray
    comparison_idx: np.ndarray
    target_weights: np.ndarray           # theta1
    comparison_weights: np.ndarray       # theta0
    odds_weights: np.ndarray             # odds normalized to comparison mean 1
    target_correction: np.ndarray        # W' G^-1 E_T[W]
    comparison_correction: np.ndarray    # W' G^-1 E_C[W v]
    design: np.ndarray                   # outcome-model covariates, all units
    labels: List[str]
    estimate: Optional[float] = None
    max_pscore: Optional[float] = None
    trimmed_comparison: int = 0
    fallback: bool = False

    @property
    def n_treated(self) -> int:
        return len(self.target_idx)

    @property
    def n_comparison(self) -> int:
        return len(self.comparison_idx)

    @property
    def negative_comparison(self) -> int:
        return int(np.sum(self.comparison_weights < 0))

    def balance_gap(self, sample_weight: np.ndarray) -> np.ndarray:
        """E_C[theta0 W] - E_T[W] per design column (intercept first)."""
        ones_t = np.ones((self.n_treated, 1))
        ones_c = np.ones((self.n_comparison, 1))
        Wt = np.hstack([ones_t, self.design[self.target_idx]])
        Wc = np.hstack([ones_c, self.design[self.comparison_idx]])
        st = sample_weight[self.target_idx]
        sc = sample_weight[self.comparison_idx]
        return np.average(Wc * self.comparison_weights[:, None], axis=0, weights=sc) - np.average(
            Wt, axis=0, weights=st
        )


# ---------- Cells ----------

def base_period(g: int, anticipation: int) -> int:
    return g - 1 - anticipation


def cell_masks(data: PanelDataset, g: int, t: int, options: EstimationOptions) -> Tuple[int, np.ndarray, np.ndarray]:
    """(base, target mask, comparison mask) for cell (g, t), internal indices."""
    base = base_period(g, options.anticipation)
    if base < 1:
        raise EstimationError(
            f"group {data.label(g)} has no base period with anticipation {options.anticipation}"
        )
    if t == base:
        raise EstimationError(f"cell t={data.label(t)} coincides with the base period")
    target = data.group == g
    if not target.any():
        raise EmptyStratumError(f"group {data.label(g)} is empty")
    comparison = data.never_treated.copy()
    if Comparison(options.comparison) == Comparison.NOT_YET_TREATED:
        comparison |= data.group > max(t, g) + options.anticipation
    if not comparison.any():
        raise EstimationError(
            f"comparison group is empty for g={data.label(g)}, t={data.label(t)} ({Comparison(options.comparison).value})"
        )
    return base, target, comparison


def cell_plan(data: PanelDataset, options: EstimationOptions, pre_periods: Optional[bool] = None) -> List[Tuple[int, int]]:
    """Estimable (g, t) cells, internal indices, post cells first within each group."""
    pre = options.pre_periods if pre_periods is None else pre_periods
    cells: List[Tuple[int, int]] = []
    for g in data.treated_groups:
        base = base_period(g, options.anticipation)
        if base < 1:
            logger.warning(
                f"Group {data.label(g)} skipped: no base period with anticipation {options.anticipation}"
            )
            continue
        cells += [(g, t) for t in range(g, data.T + 1)]
        if pre:
            cells += [(g, t) for t in range(1, g) if t != base]
    return cells


# ---------- Core ----------

def _fit_cell(
    data: PanelDataset,
    spec: CovariateSpec,
    g: int,
    t: int,
    options: EstimationOptions,
    method: Method,
) -> AipwWeightReport:
    base, target, comparison = cell_masks(data, g, t, options)
    sw = data.sample_weight
    out_model = INTERCEPT_ONLY if method == Method.IPW else spec.for_outcome()
    ps_model = spec.for_propensity()

    use_ps = method in (Method.AIPW, Method.IPW)
    fallback = False
    if use_ps:
        k_ps = len(design_labels(data, ps_model))
        minimum = options.min_group_size or max(k_ps + 2, MIN_PS_GROUP)
        n_target = int(target.sum())
        n_comparison = int(comparison.sum())
        if min(n_target, n_comparison) < minimum:
            logger.warning(
                f"Cell g={data.label(g)}, t={data.label(t)} has {n_target} target and {n_comparison} "
                f"comparison units (< {minimum}); falling back to regression adjustment"
            )
            use_ps = False
            fallback = True

    trimmed_c = 0
    ps = None
    W_ps = None
    max_p = None
    trimmed = False
    while True:
        rows = np.flatnonzero(target | comparison)
        if use_ps:
            W_ps, ps_labels = build_design(data, ps_model, g, t, base, rows=rows)
            ps = logit_fit(W_ps[rows], target[rows], sw[rows], ridge=options.ridge, names=ps_labels)
            p_rows = ps.predict(W_ps[rows])
            max_p = float(p_rows.max())
            if options.trim:
                if not trimmed:
                    # comparison side only
                    drop = rows[(p_rows > 1 - TRIM_LEVEL) & comparison[rows]]
                    trimmed = True
                    if drop.size:
                        trimmed_c = int(drop.size)
                        logger.warning(
                            f"Trimming g={data.label(g)}, t={data.label(t)}: dropped {trimmed_c} comparison "
                            f"units with propensity > {1 - TRIM_LEVEL:g}"
                        )
                        comparison = comparison.copy()
                        comparison[drop] = False
                        if not comparison.any():
                            raise EmptyStratumError(
                                f"trimming emptied the comparison group for g={data.label(g)}, t={data.label(t)}"
                            )
                        continue
            elif max_p >= 1 - OVERLAP_TOL:
                raise OverlapError(
                    f"fitted propensity {max_p:.8f} >= 1 - {OVERLAP_TOL:g} for g={data.label(g)}, "
                    f"t={data.label(t)}; overlap fails. Enable trimming or restrict the covariates"
                )
        break

    t_idx = np.flatnonzero(target)
    c_idx = np.flatnonzero(comparison)
    sw_t = sw[t_idx]
    sw_c = sw[c_idx]

    W_out, out_labels = build_design(data, out_model, g, t, base, rows=c_idx)
    if use_ps:
        p_c = ps.predict(W_ps[c_idx])
        odds = p_c / (1.0 - p_c)
    else:
        odds = np.ones(len(c_idx))
    v = odds / np.average(odds, weights=sw_c)

    dy = None
    if data.outcome is not None:
        dy = data.outcome[:, t - 1] - data.outcome[:, base - 1]
    response = dy[c_idx] if dy is not None else np.zeros(len(c_idx))
    proj = linear_projection(W_out[c_idx], response, sw_c, intercept=True, labels=out_labels)

    Wt_t = np.column_stack([np.ones(len(t_idx)), W_out[t_idx]])
    Wt_c = np.column_stack([np.ones(len(c_idx)), W_out[c_idx]])
    target_corr = Wt_c @ proj.gram_solve(np.average(Wt_t, axis=0, weights=sw_t))
    comp_corr = Wt_c @ proj.gram_solve(np.average(Wt_c * v[:, None], axis=0, weights=sw_c))
    theta0 = v + target_corr - comp_corr

    estimate = None
    if dy is not None:
        resid_t = dy[t_idx] - proj.predict(W_out[t_idx])
        w1 = sw_t / sw_t.sum()
        w0 = sw_c * v / np.sum(sw_c * v)
        estimate = float(w1 @ resid_t - w0 @ proj.residuals)
        if not np.isfinite(estimate):
            raise EstimationError(f"non-finite estimate for g={data.label(g)}, t={data.label(t)}")

    return AipwWeightReport(
        g=g,
        t=t,
        base=base,
        method=method,
        target_idx=t_idx,
        comparison_idx=c_idx,
        target_weights=np.ones(len(t_idx)),
        comparison_weights=theta0,
        odds_weights=v,
        target_correction=target_corr,
        comparison_correction=comp_corr,
        design=W_out,
        labels=out_labels,
        estimate=estimate,
        max_pscore=max_p,
        trimmed_comparison=trimmed_c,
        fallback=fallback,
    )


def _as_result(data: PanelDataset, rep: AipwWeightReport, options: EstimationOptions) -> GroupTimeResult:
    return GroupTimeResult(
        g=data.label(rep.g),
        t=data.label(rep.t),
        event_time=data.label(rep.t) - data.label(rep.g),
        att=rep.estimate,
        estimator=rep.method,
        comparison=options.comparison,
        base_period=data.label(rep.base),
        n_treated=rep.n_treated,
        n_comparison=rep.n_comparison,
        max_pscore=rep.max_pscore,
        trimmed_comparison=rep.trimmed_comparison,
        fallback=rep.fallback,
        post=rep.t >= rep.g,
    )


def _estimate_cell(
    data: PanelDataset,
    spec: CovariateSpec,
    g: int,
    t: int,
    options: Optional[EstimationOptions],
    method: Method,
) -> GroupTimeResult:
    if data.outcome is None:
        raise EstimationError("estimation needs an outcome; the panel was loaded without one")
    options = options or EstimationOptions()
    rep = _fit_cell(data, spec, data.index(g), data.index(t), options, method)
    return _as_result(data, rep, options)


# ---------- Public surface ----------

def att_gt_aipw(data: PanelDataset, spec: CovariateSpec, g: int, t: int, options: Optional[EstimationOptions] = None) -> GroupTimeResult:
    """Doubly robust ATT(g, t); g and t are period labels."""
    return _estimate_cell(data, spec, g, t, options, Method.AIPW)


def att_gt_ra(data: PanelDataset, spec: CovariateSpec, g: int, t: int, options: Optional[EstimationOptions] = None) -> GroupTimeResult:
    """Regression adjustment: target mean of dY minus the comparison-fitted prediction."""
    return _estimate_cell(data, spec, g, t, options, Method.RA)


def att_gt_ipw(data: PanelDataset, spec: CovariateSpec, g: int, t: int, options: Optional[EstimationOptions] = None) -> GroupTimeResult:
    """Normalized odds weighting; the outcome model is intercept only."""
    return _estimate_cell(data, spec, g, t, options, Method.IPW)


def aipw_implicit_weights(
    data: PanelDataset,
    spec: CovariateSpec,
    g: int,
    t: int,
    options: Optional[EstimationOptions] = None,
    method: Method = Method.AIPW,
) -> AipwWeightReport:
    """Implicit weights for cell (g, t) (period labels); the outcome is not needed."""
    options = options or EstimationOptions()
    return _fit_cell(data, spec, data.index(g), data.index(t), options, Method(method))


def _view_panel(view: TwoPeriodView) -> PanelDataset:
    n = view.n
    outcome = None if view.dY is None else np.column_stack([np.zeros(n), view.dY])
    return PanelDataset(
        unit_ids=tuple(str(i) for i in range(n)),
        periods=(view.t_star - 1, view.t_star),
        outcome=outcome,
        group=np.where(view.treat == 1, 2, 3).astype(int),
        tv=np.stack([view.X_pre, view.X_post], axis=1),
        tv_names=view.tv_names,
        ti=view.Z,
        ti_names=view.ti_names,
        sample_weight=view.sample_weight,
    )


def two_period_aipw(
    view: TwoPeriodView,
    spec: CovariateSpec,
    options: Optional[EstimationOptions] = None,
) -> Tuple[Optional[float], AipwWeightReport]:
    """
    AIPW on a two-period view: (estimate, weight report). The estimate is None when the view has no outcome.
    Untreated units are the comparison group.
    """
    options = (options or EstimationOptions()).model_copy(
        update={"anticipation": 0, "comparison": Comparison.NEVER_TREATED}
    )
    data = _view_panel(view)
    rep = _fit_cell(data, spec, 2, 2, options, Method.AIPW)
    gap = np.max(np.abs(rep.balance_gap(data.sample_weight)))
    if gap > 1e-6:
        logger.warning(f"AIPW implicit weights miss the balancing identity by {gap:.3g}")
    return rep.estimate, rep


def _run_cells(data, spec, cells, options, method) -> List[AipwWeightReport]:
    if options.threads <= 1 or len(cells) <= 1:
        return [_fit_cell(data, spec, g, t, options, method) for g, t in cells]
    out: List[AipwWeightReport] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=options.threads) as ex:
        futs = [ex.submit(_fit_cell, data, spec, g, t, options, method) for g, t in cells]
        for fut in concurrent.futures.as_completed(futs):
            out.append(fut.result())
    return out


def estimate_att_gt(
    data: PanelDataset,
    spec: CovariateSpec,
    options: Optional[EstimationOptions] = None,
    method: Method = Method.AIPW,
    verbose: bool = True,
) -> List[GroupTimeResult]:
    """
    Every estimable (g, t) cell with `method`; post cells always, pre cells when
    `options.pre_periods`. Cells run on up to `options.threads` threads; rows come back
    sorted by (g, t).
    """
    if data.outcome is None:
        raise EstimationError("estimation needs an outcome; the panel was loaded without one")
    method = Method(method)
    if method == Method.TWFE:
        raise ValueError("estimate_att_gt handles ra, ipw and aipw; use the twfe module for twfe")
    options = options or EstimationOptions()
    cells = cell_plan(data, options)
    if not cells:
        raise EstimationError("no estimable (g, t) cells")
    reports = _run_cells(data, spec, cells, options, method)
    results = sorted((_as_result(data, r, options) for r in reports), key=lambda r: (r.g, r.t))
    if verbose:
        n_fb = sum(r.fallback for r in results)
        logger.info(
            f"Estimated {len(results)} (g,t) cells with {method.value} "
            f"({Comparison(options.comparison).value}, anticipation={options.anticipation}, fallbacks={n_fb})"
        )
        for r in results:
            logger.debug(f"ATT(g={r.g}, t={r.t}) = {r.att:.6g} [n_t={r.n_treated}, n_c={r.n_comparison}]")
    return results


def implicit_weight_reports(
    data: PanelDataset,
    spec: CovariateSpec,
    options: Optional[EstimationOptions] = None,
    method: Method = Method.AIPW,
) -> List[AipwWeightReport]:
    """Implicit-weight reports for every post-treatment cell, sorted by (g, t)."""
    options = options or EstimationOptions()
    cells = cell_plan(data, options, pre_periods=False)
    if not cells:
        raise EstimationError("no estimable (g, t) cells")
    reports = _run_cells(data, spec, cells, options, Method(method))
    return sorted(reports, key=lambda r: (r.g, r.t))
