from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.domain.errors import DegenerateCovariateError, DesignError, ReportError
from app.domain.panel import PanelDataset
from app.domain.schemas import BalanceReport, BalanceRow, CellBalance, NegativeWeightSummary
from app.services.balance.profiles import WeightCell, WeightProfile, profile_from_aipw
from app.services.drdid.attgt import AipwWeightReport
from app.services.drdid.design import covariate_column
from app.services.numcore.stats import kish_ess, std_diff, weighted_mean_var
from app.utils.logging import get_logger

logger = get_logger(__name__)


def default_functionals(data: PanelDataset) -> List[str]:
    """Change, base level and post level of every time-varying covariate, then every time-invariant one."""
    labels: List[str] = []
    for x in data.tv_names:
        labels += [f"d.{x}", f"base.{x}", f"post.{x}"]
    labels += list(data.ti_names)
    return labels


def _evaluate(data: PanelDataset, label: str, cell: WeightCell) -> np.ndarray:
    try:
        return covariate_column(data, label, cell.t, cell.base)
    except DesignError as e:
        raise ReportError(f"functional '{label}': {e}") from e


def _weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    total = float(np.sum(w))
    if total == 0:
        raise ReportError("implicit weights sum to zero in a group")
    return float(np.sum(w * x) / total)


def _moments(data: PanelDataset, x: np.ndarray, cell: WeightCell) -> Tuple[float, float, float, float, float, float]:
    """(raw mean, raw var, weighted mean) for target then comparison."""
    sw = data.sample_weight
    st = sw[cell.target_idx]
    sc = sw[cell.comparison_idx]
    xt = x[cell.target_idx]
    xc = x[cell.comparison_idx]
    mt, vt = weighted_mean_var(xt, st)
    mc, vc = weighted_mean_var(xc, sc)
    wmt = _weighted_mean(xt, st * cell.target_weights)
    wmc = _weighted_mean(xc, sc * cell.comparison_weights)
    return mt, vt, wmt, mc, vc, wmc


def _row(label: str, mt: float, vt: float, wmt: float, mc: float, vc: float, wmc: float) -> BalanceRow:
    try:
        raw = std_diff(mt, vt, mc, vc)
        weighted = std_diff(wmt, vt, wmc, vc)
        degenerate = False
    except DegenerateCovariateError:
        raw = weighted = None
        degenerate = True
    return BalanceRow(
        label=label,
        raw_std_diff=raw,
        weighted_std_diff=weighted,
        degenerate=degenerate,
        mean_target=mt,
        mean_comparison=mc,
        weighted_mean_target=wmt,
        weighted_mean_comparison=wmc,
    )


def negative_weight_summary(weights: np.ndarray, unit_ids: Optional[Sequence[str]] = None) -> NegativeWeightSummary:
    """Exact sign count (w < 0), share, minimum weight and the ids of negatively weighted units."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise ReportError("negative-weight summary needs at least one weight")
    neg = np.flatnonzero(w < 0)
    ids: List[str] = []
    if unit_ids is not None:
        for i in neg:
            if unit_ids[i] not in ids:
                ids.append(unit_ids[i])
    return NegativeWeightSummary(
        count=int(neg.size),
        share=float(neg.size / w.size),
        min_weight=float(w.min()),
        unit_ids=ids,
    )


def _side_weights(data: PanelDataset, profile: WeightProfile, aggs: List[float], side: str) -> np.ndarray:
    """Per-unit effective weight in the aggregated weighted mean of one side."""
    u = np.zeros(data.n)
    sw = data.sample_weight
    for c, a in zip(profile.cells, aggs):
        idx = c.target_idx if side == "target" else c.comparison_idx
        w = c.target_weights if side == "target" else c.comparison_weights
        contrib = sw[idx] * w
        np.add.at(u, idx, a * contrib / contrib.sum())
    used = np.zeros(data.n, dtype=bool)
    for c in profile.cells:
        used[c.target_idx if side == "target" else c.comparison_idx] = True
    return u[used]


def balance_report(
    weights: Union[WeightProfile, AipwWeightReport],
    data: PanelDataset,
    functionals: Optional[Sequence[str]] = None,
) -> BalanceReport:
    """
    Standardized differences of covariate functionals, raw (sampling weights only) and under the
    implicit weights. Both use the raw group variances in the denominator.

    Several cells are combined with the profile's aggregation weights: means and variances are
    averaged across cells before differencing.
    """
    profile = profile_from_aipw([weights], data) if isinstance(weights, AipwWeightReport) else weights
    if not profile.cells:
        raise ReportError("weight profile has no cells")
    labels = list(functionals) if functionals else default_functionals(data)
    if not labels:
        raise ReportError("no covariate functionals to report (panel has no covariates)")
    dupes = sorted({lab for lab in labels if labels.count(lab) > 1})
    if dupes:
        raise ReportError(f"functionals listed more than once: {dupes}")

    total = profile.total_agg_weight
    if total <= 0:
        raise ReportError("aggregation weights must sum to a positive value")
    aggs = [c.agg_weight / total for c in profile.cells]

    cell_rows: List[List[BalanceRow]] = [[] for _ in profile.cells]
    overall: List[BalanceRow] = []
    for label in labels:
        acc = np.zeros(6)
        for k, (cell, a) in enumerate(zip(profile.cells, aggs)):
            m = np.array(_moments(data, _evaluate(data, label, cell), cell))
            cell_rows[k].append(_row(label, *m))
            acc += a * m
        overall.append(_row(label, *acc))

    ids = data.unit_ids
    tw = np.concatenate([c.target_weights for c in profile.cells])
    t_ids = [ids[i] for c in profile.cells for i in c.target_idx]
    cw = np.concatenate([c.comparison_weights for c in profile.cells])
    c_ids = [ids[i] for c in profile.cells for i in c.comparison_idx]

    cells: List[CellBalance] = []
    if len(profile.cells) > 1:
        cells = [
            CellBalance(g=data.label(c.g), t=data.label(c.t), aggregation_weight=a, rows=rows)
            for c, a, rows in zip(profile.cells, aggs, cell_rows)
        ]

    report = BalanceReport(
        estimator=profile.estimator,
        rows=overall,
        ess_treated=kish_ess(_side_weights(data, profile, aggs, "target")),
        ess_comparison=kish_ess(_side_weights(data, profile, aggs, "comparison")),
        negative_treated=negative_weight_summary(tw, t_ids),
        negative_comparison=negative_weight_summary(cw, c_ids),
        cells=cells,
    )
    worst = max((abs(r.weighted_std_diff) for r in overall if r.weighted_std_diff is not None), default=0.0)
    logger.info(
        f"Balance ({profile.estimator}): {len(overall)} functionals over {len(profile.cells)} cell(s), "
        f"max |weighted std-diff|={worst:.3g}, ESS treated={report.ess_treated:.1f}, "
        f"comparison={report.ess_comparison:.1f}"
    )
    return report


def balance_frame(report: BalanceReport) -> pd.DataFrame:
    """One row per (scope, functional); scope is 'overall' or 'g=<g>,t=<t>'."""
    records: List[Dict] = []
    scopes = [("overall", report.rows)] + [(f"g={c.g},t={c.t}", c.rows) for c in report.cells]
    for scope, rows in scopes:
        for r in rows:
            rec = {"estimator": report.estimator, "scope": scope}
            rec.update(r.model_dump())
            records.append(rec)
    return pd.DataFrame.from_records(records)


def balance_csv(report: BalanceReport) -> str:
    return balance_frame(report).to_csv(index=False, float_format="%.10g", lineterminator="\n")
