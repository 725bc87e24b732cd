from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.domain.errors import ReportError
from app.domain.panel import PanelDataset, TwoPeriodView
from app.services.drdid.aggregate import group_shares
from app.services.drdid.attgt import AipwWeightReport
from app.services.twfe.weights import TwfeWeightReport
from app.utils.logging import get_logger

logger = get_logger(__name__)


@dataclass
class WeightCell:
    """Implicit weights of one (g, t) cell; internal period indices, weights relative to sampling weights."""
    g: int
    t: int
    base: int
    target_idx: np.ndarray
    comparison_idx: np.ndarray
    target_weights: np.ndarray
    comparison_weights: np.ndarray
    agg_weight: float = 1.0


@dataclass
class WeightProfile:
    estimator: str
    cells: List[WeightCell] = field(default_factory=list)

    def __post_init__(self) -> None:
        for c in self.cells:
            if len(c.target_idx) != len(c.target_weights) or len(c.comparison_idx) != len(c.comparison_weights):
                raise ReportError(f"weights and units disagree in cell (g={c.g}, t={c.t})")

    @property
    def total_agg_weight(self) -> float:
        return float(sum(c.agg_weight for c in self.cells))


def _overall_agg(data: PanelDataset, cells: Sequence[Tuple[int, int]]) -> List[float]:
    shares = group_shares(data, [g for g, _ in cells])
    return [shares[g] / (data.T - g + 1) for g, _ in cells]


def profile_from_two_period(report: TwfeWeightReport, view: TwoPeriodView, data: PanelDataset) -> WeightProfile:
    """Two-period TWFE weights as a single cell of `data` around the view's t_star."""
    if report.kind != "two_period":
        raise ReportError("expected a two-period TWFE weight report")
    s = data.index(view.t_star)
    treated = view.treat == 1
    cell = WeightCell(
        g=s,
        t=s,
        base=s - 1,
        target_idx=np.flatnonzero(treated),
        comparison_idx=np.flatnonzero(~treated),
        target_weights=report.unit_weights[treated],
        comparison_weights=report.unit_weights[~treated],
    )
    return WeightProfile(estimator="twfe", cells=[cell])


def profile_from_multi_period(report: TwfeWeightReport, data: PanelDataset) -> WeightProfile:
    """Post-treatment TWFE expectation weights, aggregated with overall-ATT cell weights."""
    if report.kind != "multi_period":
        raise ReportError("expected a multi-period TWFE weight report")
    usable = []
    for c in report.cells:
        if not c.post:
            continue
        if c.w1 is None or c.w0 is None:
            logger.warning(
                f"TWFE balance skips cell (g={data.label(c.g)}, t={data.label(c.t)}): undefined normalization"
            )
            continue
        usable.append(c)
    if not usable:
        raise ReportError("no post-treatment TWFE cells with defined weights")
    aggs = _overall_agg(data, [(c.g, c.t) for c in usable])
    cells = [
        WeightCell(
            g=c.g,
            t=c.t,
            base=c.g - 1,
            target_idx=c.target_idx,
            comparison_idx=c.comparison_idx,
            target_weights=c.w1,
            comparison_weights=c.w0,
            agg_weight=a,
        )
        for c, a in zip(usable, aggs)
    ]
    return WeightProfile(estimator="twfe", cells=cells)


def profile_from_aipw(reports: Sequence[AipwWeightReport], data: PanelDataset, estimator: Optional[str] = None) -> WeightProfile:
    """AIPW / RA / IPW implicit weights; theta1 = 1 on targets, theta0 on comparison units."""
    reports = list(reports)
    if not reports:
        raise ReportError("no implicit-weight reports to profile")
    aggs = _overall_agg(data, [(r.g, r.t) for r in reports]) if len(reports) > 1 else [1.0]
    cells = [
        WeightCell(
            g=r.g,
            t=r.t,
            base=r.base,
            target_idx=r.target_idx,
            comparison_idx=r.comparison_idx,
            target_weights=r.target_weights,
            comparison_weights=r.comparison_weights,
            agg_weight=a,
        )
        for r, a in zip(reports, aggs)
    ]
    return WeightProfile(estimator=estimator or reports[0].method.value, cells=cells)


def uniform_profile(profile: WeightProfile) -> WeightProfile:
    """Same cells with every weight set to 1."""
    cells = [
        WeightCell(
            g=c.g,
            t=c.t,
            base=c.base,
            target_idx=c.target_idx,
            comparison_idx=c.comparison_idx,
            target_weights=np.ones(len(c.target_idx)),
            comparison_weights=np.ones(len(c.comparison_idx)),
            agg_weight=c.agg_weight,
        )
        for c in profile.cells
    ]
    return WeightProfile(estimator="uniform", cells=cells)
