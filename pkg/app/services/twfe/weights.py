from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.domain.errors import EstimationError
from app.domain.panel import PanelDataset, TwoPeriodView
from app.services.twfe.estimators import TwfeFit, fwl_alpha, residualized_treatment, treatment_residual
from app.utils.logging import get_logger

logger = get_logger(__name__)

REMAINDER_WARN_SHARE = 0.05
ZERO_MEAN_TOL = 1e-12


@dataclass
class TwfeCellWeights:
    """Implicit TWFE weights for one (g, t) cell, internal period indices."""
    g: int
    t: int
    sum_weight: float                     # w_bar(g, t)
    target_idx: np.ndarray                # units with G = g
    comparison_idx: np.ndarray            # never-treated units
    w1: Optional[np.ndarray]              # expectation weights on group g (None if E[u_t | G=g] = 0)
    w0: Optional[np.ndarray]              # expectation weights on never-treated (None if undefined)
    contribution: Optional[float] = None

    @property
    def post(self) -> bool:
        return self.t >= self.g


@dataclass
class TwfeWeightReport:
    """
    Two-period: per-unit weights w1 (treated) / w0 (untreated).
    Multi-period: per-(g,t) sum weights and expectation weights, contributions and remainder.
    """
    kind: str                                        # "two_period" | "multi_period"
    alpha: Optional[float]
    unit_weights: Optional[np.ndarray] = None        # two-period: w1 on treated, w0 on untreated
    treat: Optional[np.ndarray] = None
    projection: Optional[np.ndarray] = None          # L(D | dX)
    cells: List[TwfeCellWeights] = field(default_factory=list)
    h: Dict[Tuple[int, int], float] = field(default_factory=dict)
    gamma: Optional[np.ndarray] = None
    group_shares: Dict[int, float] = field(default_factory=dict)
    post_sum: float = 0.0
    pre_sum: float = 0.0
    post_contribution: Optional[float] = None
    pre_contribution: Optional[float] = None
    remainder: Optional[float] = None
    negative_treated: int = 0
    negative_comparison: int = 0

    @property
    def pretrend_zeroed_alpha(self) -> Optional[float]:
        if self.alpha is None or self.pre_contribution is None:
            return None
        return self.alpha - self.pre_contribution

    @property
    def negative_weight_count(self) -> int:
        return self.negative_treated + self.negative_comparison


def two_period_implicit_weights(view: TwoPeriodView) -> TwfeWeightReport:
    """
    w1 = pi (1 - L) / E[(D - L)^2] on treated units, w0 = (1 - pi) L / E[(D - L)^2] on untreated,
    with L the projection of D on (1, dX). No outcome needed.
    """
    L, _, den = treatment_residual(view)
    pi = view.pi
    treated = view.treat == 1
    weights = np.where(treated, pi * (1.0 - L) / den, (1.0 - pi) * L / den)
    neg_t = int(np.sum(weights[treated] < 0))
    neg_c = int(np.sum(weights[~treated] < 0))
    if neg_t or neg_c:
        logger.warning(f"TWFE implicit weights: {neg_t} negative treated, {neg_c} negative untreated")
    alpha = fwl_alpha(view) if view.dY is not None else None
    return TwfeWeightReport(
        kind="two_period",
        alpha=alpha,
        unit_weights=weights,
        treat=view.treat.copy(),
        projection=L,
        post_sum=1.0,
        pre_sum=0.0,
        post_contribution=alpha,
        pre_contribution=0.0 if alpha is not None else None,
        remainder=0.0 if alpha is not None else None,
        negative_treated=neg_t,
        negative_comparison=neg_c,
    )


def h_table(data: PanelDataset) -> Dict[Tuple[int, int], float]:
    """h(g,t) = 1{t>=g} - (T-g+1)/T - E[D_t] + mean_s E[D_s] with weighted sample shares."""
    T = data.T
    ED = np.average(data.treat_matrix, axis=0, weights=data.sample_weight)
    groups = data.treated_groups + [data.never_index]
    table: Dict[Tuple[int, int], float] = {}
    for g in groups:
        for t in range(1, T + 1):
            table[(g, t)] = float((t >= g) - (T - g + 1) / T - ED[t - 1] + ED.mean())
    return table


def mp_implicit_weights(
    data: PanelDataset,
    fit: Optional[TwfeFit] = None,
    region_fe: Optional[bool] = None,
) -> TwfeWeightReport:
    """
    Implicit weights of the fixed-effects TWFE coefficient under staggered adoption, base period g-1.

    Sum weights cover every group including never-treated, so post cells sum to 1 and the
    remaining cells to -1. Contributions need an outcome; without one only weights are reported.
    """
    if not data.never_treated.any():
        raise EstimationError("multi-period implicit weights require never-treated units")
    if region_fe is None:
        region_fe = bool(fit.region_fe) if fit is not None else False

    u, gamma = residualized_treatment(data, region_fe)
    w = data.sample_weight
    N = w.sum()
    T = data.T
    D = data.treat_matrix
    denom = float(np.sum(w * np.sum(u * D, axis=1)) / N)
    if abs(denom) <= ZERO_MEAN_TOL:
        raise EstimationError("multi-period TWFE weights are undefined: zero post-period residual mass")

    Y = data.outcome
    nt = data.never_treated
    w_nt = w[nt]
    u_nt = u[nt]
    scale = max(1.0, float(np.max(np.abs(u))))

    shares: Dict[int, float] = {}
    cells: List[TwfeCellWeights] = []
    post_sum = pre_sum = 0.0
    post_c = pre_c = 0.0
    neg_t = neg_c = 0
    groups = data.treated_groups + [data.never_index]
    nt_idx = np.flatnonzero(nt)
    for g in groups:
        members = data.group == g
        idx = np.flatnonzero(members)
        wg = w[members]
        pi_g = float(wg.sum() / N)
        shares[g] = pi_g
        for t in range(1, T + 1):
            mean_u = float(np.average(u[members, t - 1], weights=wg))
            wbar = pi_g * mean_u / denom
            if t >= g:
                post_sum += wbar
            else:
                pre_sum += wbar
            if g == data.never_index:
                continue

            mean_u_nt = float(np.average(u_nt[:, t - 1], weights=w_nt))
            w1 = u[members, t - 1] / mean_u if abs(mean_u) > ZERO_MEAN_TOL * scale else None
            w0 = u_nt[:, t - 1] / mean_u_nt if abs(mean_u_nt) > ZERO_MEAN_TOL * scale else None
            cell = TwfeCellWeights(
                g=g, t=t, sum_weight=wbar, target_idx=idx, comparison_idx=nt_idx, w1=w1, w0=w0,
            )
            if t >= g:
                neg_t += int(np.sum(w1 < 0)) if w1 is not None else 0
                neg_c += int(np.sum(w0 < 0)) if w0 is not None else 0

            if Y is not None and t != g - 1:
                dy_g = Y[members, t - 1] - Y[members, g - 2]
                dy_nt = Y[nt, t - 1] - Y[nt, g - 2]
                treated_part = pi_g * float(np.average(u[members, t - 1] * dy_g, weights=wg)) / denom
                if w0 is None:
                    logger.warning(
                        f"Never-treated residual mean is zero at t={data.label(t)}; "
                        f"comparison term of cell (g={data.label(g)}, t={data.label(t)}) set to 0"
                    )
                    comparison_part = 0.0
                else:
                    comparison_part = wbar * float(np.average(w0 * dy_nt, weights=w_nt))
                cell.contribution = treated_part - comparison_part
                if t >= g:
                    post_c += cell.contribution
                else:
                    pre_c += cell.contribution
            elif Y is not None:
                cell.contribution = 0.0
            cells.append(cell)

    alpha = None
    if Y is not None:
        alpha = fit.alpha if fit is not None else float(np.sum(w * np.sum(u * Y, axis=1)) / N / denom)

    report = TwfeWeightReport(
        kind="multi_period",
        alpha=alpha,
        cells=cells,
        h=h_table(data),
        gamma=gamma,
        group_shares=shares,
        post_sum=post_sum,
        pre_sum=pre_sum,
        negative_treated=neg_t,
        negative_comparison=neg_c,
    )
    if alpha is not None:
        report.post_contribution = post_c
        report.pre_contribution = pre_c
        report.remainder = alpha - post_c - pre_c
        if alpha != 0 and abs(report.remainder) > REMAINDER_WARN_SHARE * abs(alpha):
            logger.warning(
                f"TWFE decomposition remainder {report.remainder:.4g} exceeds "
                f"{REMAINDER_WARN_SHARE:.0%} of alpha={alpha:.4g}"
            )
        logger.info(
            f"TWFE weights: post={post_c:.6g}, pre={pre_c:.6g}, remainder={report.remainder:.3g}, "
            f"pretrend-zeroed alpha={report.pretrend_zeroed_alpha:.6g}"
        )
    return report
