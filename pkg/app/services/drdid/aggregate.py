from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from app.domain.errors import EstimationError
from app.domain.panel import PanelDataset
from app.domain.schemas import AggregateResult, AggregateValue, ComponentWeight, GroupTimeResult
from app.utils.logging import get_logger

logger = get_logger(__name__)

OVERALL_LABEL = "overall"


def group_shares(data: PanelDataset, groups: Iterable[int]) -> Dict[int, float]:
    """p_bar_g: sampling-weighted share of each group (internal index) among the given treated groups."""
    groups = sorted(set(groups))
    mass = {g: float(data.sample_weight[data.group == g].sum()) for g in groups}
    total = sum(mass.values())
    if total <= 0:
        raise EstimationError("no treated units in the aggregated groups")
    return {g: m / total for g, m in mass.items()}


def _cell_map(results: List[GroupTimeResult], data: PanelDataset) -> Dict[Tuple[int, int], GroupTimeResult]:
    return {(data.index(r.g), data.index(r.t)): r for r in results}


def overall_weights(results: List[GroupTimeResult], data: PanelDataset) -> Dict[Tuple[int, int], float]:
    """w_o(g,t) = p_bar_g / (T - g + 1) over post cells; raises when a post cell of a covered group is missing."""
    cells = _cell_map(results, data)
    groups = sorted({g for (g, t), r in cells.items() if r.post})
    if not groups:
        raise EstimationError("no post-treatment cells to aggregate")
    missing = [(data.label(g), data.label(t)) for g in groups for t in range(g, data.T + 1) if (g, t) not in cells]
    if missing:
        raise EstimationError(f"missing (g,t) cells for aggregation: {missing}")
    skipped = [data.label(g) for g in data.treated_groups if g not in groups]
    if skipped:
        logger.warning(f"Aggregates exclude groups without estimates: {skipped}")
    shares = group_shares(data, groups)
    T = data.T
    return {(g, t): shares[g] / (T - g + 1) for g in groups for t in range(g, T + 1)}


def aggregate_overall(results: List[GroupTimeResult], data: PanelDataset) -> AggregateResult:
    """ATT^o = sum over post cells of w_o(g,t) ATT(g,t)."""
    weights = overall_weights(results, data)
    cells = _cell_map(results, data)
    est = float(sum(w * cells[c].att for c, w in weights.items()))
    comps = [ComponentWeight(g=data.label(g), t=data.label(t), weight=w) for (g, t), w in sorted(weights.items())]
    return AggregateResult(
        kind="overall",
        values=[AggregateValue(label=OVERALL_LABEL, estimate=est)],
        weights={OVERALL_LABEL: comps},
    )


def event_weights(
    results: List[GroupTimeResult],
    data: PanelDataset,
    event_times: Optional[Iterable[int]] = None,
) -> Dict[int, Dict[Tuple[int, int], float]]:
    """Per event time e, weights proportional to p_bar_g over groups observed at e."""
    cells = _cell_map(results, data)
    by_e: Dict[int, List[Tuple[int, int]]] = {}
    for (g, t), r in cells.items():
        by_e.setdefault(r.event_time, []).append((g, t))
    if event_times is not None:
        wanted = sorted(set(event_times))
        missing = [e for e in wanted if e not in by_e]
        if missing:
            raise EstimationError(f"no (g,t) cells at event times {missing}")
        by_e = {e: by_e[e] for e in wanted}
    out: Dict[int, Dict[Tuple[int, int], float]] = {}
    for e in sorted(by_e):
        members = sorted(by_e[e])
        shares = group_shares(data, [g for g, _ in members])
        out[e] = {c: shares[c[0]] for c in members}
    return out


def aggregate_event_study(
    results: List[GroupTimeResult],
    data: PanelDataset,
    event_times: Optional[Iterable[int]] = None,
) -> AggregateResult:
    """Event-study curve e -> sum_g w_e(g) ATT(g, g+e), pre-period cells included when present."""
    cells = _cell_map(results, data)
    weights = event_weights(results, data, event_times)
    values: List[AggregateValue] = []
    comps: Dict[str, List[ComponentWeight]] = {}
    for e, ws in weights.items():
        est = float(sum(w * cells[c].att for c, w in ws.items()))
        values.append(AggregateValue(label=str(e), estimate=est))
        comps[str(e)] = [ComponentWeight(g=data.label(g), t=data.label(t), weight=w) for (g, t), w in ws.items()]
    return AggregateResult(kind="event_study", values=values, weights=comps)


def aggregate_vector(results: List[GroupTimeResult], data: PanelDataset) -> np.ndarray:
    """Cells in (g, t) order followed by the overall and event-study estimates."""
    ordered = sorted(results, key=lambda r: (r.g, r.t))
    overall = aggregate_overall(results, data)
    study = aggregate_event_study(results, data)
    return np.array(
        [r.att for r in ordered] + [v.estimate for v in overall.values] + [v.estimate for v in study.values]
    )
