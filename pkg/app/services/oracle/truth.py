from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from app.domain.errors import DecompositionError, EmptyStratumError, EstimationError
from app.services.numcore.projection import linear_projection
from app.services.oracle.dgp import DiscreteDgp, PopulationTable, enumerate_population
from app.services.panel.transforms import two_period_view
from app.services.twfe.estimators import fit_fe_twfe, fwl_alpha, never_treated_projection, residualized_treatment
from app.utils.logging import get_logger

logger = get_logger(__name__)

TWO_PERIOD_TOL = 1e-10
MB_TOL = 1e-10
MULTI_PERIOD_TOL = 1e-8
KEY_DECIMALS = 12


# ---------- Helpers ----------

def _key(values: np.ndarray) -> Tuple:
    return tuple(np.round(np.asarray(values, dtype=float).reshape(-1), KEY_DECIMALS).tolist())


def _conditional_mean(
    keys: Sequence[Hashable],
    values: np.ndarray,
    mass: np.ndarray,
    source: np.ndarray,
    targets: np.ndarray,
    what: str,
) -> np.ndarray:
    """E[value | key, source rows] evaluated at each target row, by summing masses within strata."""
    num: Dict[Hashable, float] = {}
    den: Dict[Hashable, float] = {}
    for i in np.flatnonzero(source):
        num[keys[i]] = num.get(keys[i], 0.0) + mass[i] * values[i]
        den[keys[i]] = den.get(keys[i], 0.0) + mass[i]
    out = np.empty(len(targets))
    for j, i in enumerate(targets):
        d = den.get(keys[i], 0.0)
        if d <= 0:
            raise EmptyStratumError(f"no untreated mass in stratum {keys[i]} ({what}); overlap fails in the DGP")
        out[j] = num[keys[i]] / d
    return out


def _mean(values: np.ndarray, mass: np.ndarray) -> float:
    return float(np.sum(mass * values) / np.sum(mass))


# ---------- Ground truth ----------

@dataclass
class TruthAtt:
    att: float                                          # mass-weighted tau over treated post (unit, period)
    att_gt: Dict[Tuple[int, int], float]                # (g, t) period labels, t >= g
    overall: float                                      # sum_g sum_t w_o(g,t) ATT(g,t)
    conditional: Dict[int, Dict[Tuple[int, int], float]] = field(default_factory=dict)


def truth_att(dgp: DiscreteDgp) -> TruthAtt:
    table = enumerate_population(dgp)
    T = table.T
    groups = sorted(int(g) for g in np.unique(table.group) if g <= T)
    att_gt: Dict[Tuple[int, int], float] = {}
    for g in groups:
        sel = table.group == g
        for t in range(g, T + 1):
            att_gt[(g, t)] = _mean(table.tau[sel, t - 1], table.mass[sel])

    treated = table.group <= T
    total = float(table.mass[treated].sum())
    shares = {g: float(table.mass[table.group == g].sum()) / total for g in groups}
    overall = sum(shares[g] / (T - g + 1) * att_gt[(g, t)] for (g, t) in att_gt)

    D = table.treat
    att = float(np.sum(table.mass[:, None] * D * table.tau) / np.sum(table.mass[:, None] * D))

    conditional: Dict[int, Dict[Tuple[int, int], float]] = {}
    for i, c in enumerate(dgp.cells):
        conditional[i] = {
            (int(key), t): float(path[t - 1])
            for key, path in c.tau.items()
            for t in range(int(key), T + 1)
        }
    return TruthAtt(att=att, att_gt=att_gt, overall=float(overall), conditional=conditional)


def population_alpha(table: PopulationTable, two_period: Optional[bool] = None) -> float:
    """TWFE coefficient with expectations over the enumerated table (masses as weights)."""
    two_period = table.T == 2 if two_period is None else two_period
    panel = table.as_panel()
    if two_period:
        if table.T != 2:
            raise EstimationError("two-period alpha needs a table with T = 2")
        return fwl_alpha(two_period_view(panel, 2))
    return fit_fe_twfe(panel).alpha


# ---------- Two periods ----------

@dataclass
class TwoPeriodTerms:
    alpha: float
    weighted_catt: float
    pt_violation: float
    term_a: float
    term_b: float
    term_c: float
    treated_rows: np.ndarray
    weights: np.ndarray          # w(dX) per treated row

    @property
    def hidden_linearity_bias(self) -> float:
        return self.term_a + self.term_b

    @property
    def closure_error(self) -> float:
        return self.weighted_catt + self.pt_violation + self.term_a + self.term_b + self.term_c - self.alpha


def two_period_decomposition(table: PopulationTable) -> TwoPeriodTerms:
    """
    alpha = E[w CATT | D=1] + A + B + C (+ a parallel-trends violation term, zero on compliant DGPs),
    each conditional expectation taken by aggregating masses within strata of the untreated rows.
    """
    if table.T != 2:
        raise EstimationError("the two-period decomposition needs T = 2")
    mass = table.mass
    D = (table.group == 2).astype(float)
    treated = np.flatnonzero(D == 1)
    untreated = D == 0
    Y = table.outcome
    dY = Y[:, 1] - Y[:, 0]
    dX = table.x[:, 1, :] - table.x[:, 0, :]
    labels = [f"d.{x}" for x in table.tv_names]

    L = linear_projection(dX, D, mass, labels=labels).fitted
    mt = mass[treated]
    w = (1.0 - L[treated]) / _mean(1.0 - L[treated], mt)

    fit0 = linear_projection(dX[untreated], dY[untreated], mass[untreated], labels=labels)
    L0 = fit0.predict(dX[treated])

    cell_keys = [("cell", int(c)) for c in table.cell]
    level_keys = [_key(table.x[i, :, :]) for i in range(len(mass))]
    delta_keys = [_key(dX[i]) for i in range(len(mass))]
    e_cell = _conditional_mean(cell_keys, dY, mass, untreated, treated, "covariates and Z")
    e_level = _conditional_mean(level_keys, dY, mass, untreated, treated, "pre and post levels")
    e_delta = _conditional_mean(delta_keys, dY, mass, untreated, treated, "covariate change")

    untreated_trend = (table.y0[treated, 1] - table.y0[treated, 0]) + (table.shift[treated, 1] - table.shift[treated, 0])
    alpha = population_alpha(table, two_period=True)
    terms = TwoPeriodTerms(
        alpha=alpha,
        weighted_catt=_mean(w * table.tau[treated, 1], mt),
        pt_violation=_mean(w * (untreated_trend - e_cell), mt),
        term_a=_mean(w * (e_cell - e_level), mt),
        term_b=_mean(w * (e_level - e_delta), mt),
        term_c=_mean(w * (e_delta - L0), mt),
        treated_rows=treated,
        weights=w,
    )
    if abs(terms.closure_error) > TWO_PERIOD_TOL * max(1.0, abs(alpha)):
        raise DecompositionError(
            f"{table.name}: two-period decomposition misses alpha by {terms.closure_error:.3e}"
        )
    logger.debug(
        f"{table.name}: alpha={alpha:.6g}, catt={terms.weighted_catt:.6g}, A={terms.term_a:.3g}, "
        f"B={terms.term_b:.3g}, C={terms.term_c:.3g}"
    )
    return terms


# ---------- Multiple periods ----------

@dataclass
class MbTerms:
    g: int
    t: int
    base: int
    rows: np.ndarray             # rows of group g
    mb: np.ndarray               # 5 x rows, per-cell terms
    xi: np.ndarray               # rows
    share: np.ndarray            # row mass within group g

    @property
    def means(self) -> np.ndarray:
        """E[MB_k | G = g] for k = 1..5."""
        return self.mb @ self.share


def _never_projection(table: PopulationTable):
    panel = table.as_panel()
    nt = table.group == table.never_index
    if not nt.any():
        raise EstimationError(f"{table.name}: never-treated group has no mass")
    lam, Lambda0 = never_treated_projection(panel)
    return nt, lam, Lambda0


def _xi_rows(table: PopulationTable, rows: np.ndarray, t: int, base: int, nt: np.ndarray, lam: np.ndarray, Lambda0: np.ndarray) -> np.ndarray:
    """xi_{t,base} at the given rows: never-treated conditional trend minus the TWFE-implied trend."""
    Y = table.outcome
    trend = Y[:, t - 1] - Y[:, base - 1]
    keys = [("cell", int(c)) for c in table.cell]
    e_cell = _conditional_mean(keys, trend, table.mass, nt, rows, "covariates and Z")
    dX = table.x[rows, t - 1, :] - table.x[rows, base - 1, :]
    return e_cell - (lam[t - 1] - lam[base - 1]) - dX @ Lambda0


def mb_decomposition(table: PopulationTable, g: int, t: int) -> MbTerms:
    """
    Five-way split of xi_{t,g-1} for the cells of group g (internal indices); the terms add up to xi
    cell by cell.
    """
    T = table.T
    if not 2 <= g <= T:
        raise EstimationError(f"group {g} is not a treated group")
    base = g - 1
    if t == base or not 1 <= t <= T:
        raise EstimationError(f"period {t} has no misspecification term for group {g}")
    nt, lam, Lambda0 = _never_projection(table)
    mass = table.mass
    rows = np.flatnonzero(table.group == g)
    if rows.size == 0:
        raise EmptyStratumError(f"{table.name}: group {g} has no mass")

    Y = table.outcome
    trend = Y[:, t - 1] - Y[:, base - 1]
    dX_all = table.x[:, t - 1, :] - table.x[:, base - 1, :]
    n = len(mass)
    e1 = _conditional_mean([("cell", int(c)) for c in table.cell], trend, mass, nt, rows, "covariates and Z")
    e2 = _conditional_mean([_key(table.x[i]) for i in range(n)], trend, mass, nt, rows, "covariate history")
    e3 = _conditional_mean(
        [_key(np.concatenate([table.x[i, t - 1], table.x[i, base - 1]])) for i in range(n)],
        trend, mass, nt, rows, "levels at t and base",
    )
    e4 = _conditional_mean([_key(dX_all[i]) for i in range(n)], trend, mass, nt, rows, "covariate change")

    labels = [f"d.{x}" for x in table.tv_names]
    fit = linear_projection(dX_all[nt], trend[nt], mass[nt], labels=labels)
    lam_tb = float(fit.coefficients[0])
    Lam_tb = fit.coefficients[1:]
    dX = dX_all[rows]

    mb = np.vstack([
        e1 - e2,
        e2 - e3,
        e3 - e4,
        e4 - (lam_tb + dX @ Lam_tb),
        (lam_tb - (lam[t - 1] - lam[base - 1])) + dX @ (Lam_tb - Lambda0),
    ])
    xi = _xi_rows(table, rows, t, base, nt, lam, Lambda0)
    gap = float(np.max(np.abs(mb.sum(axis=0) - xi)))
    if gap > MB_TOL * max(1.0, float(np.max(np.abs(xi)))):
        raise DecompositionError(f"{table.name}: MB terms miss xi by {gap:.3e} at (g={g}, t={t})")
    return MbTerms(g=g, t=t, base=base, rows=rows, mb=mb, xi=xi, share=mass[rows] / mass[rows].sum())


@dataclass
class MultiPeriodTerms:
    alpha: float
    denominator: float
    weighted_catt: float
    post_xi: float
    pre_xi: float
    never_xi: float
    pt_violation: float
    cells: Dict[Tuple[int, int], Dict[str, float]] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.weighted_catt + self.post_xi + self.pre_xi + self.never_xi + self.pt_violation

    @property
    def closure_error(self) -> float:
        return self.total - self.alpha


def multi_period_decomposition(table: PopulationTable) -> MultiPeriodTerms:
    """
    alpha = sum over groups and periods of E[u_t (1{t>=g} CATT + xi_{t,g-1} + ptv) | G=g] pi_g / denom,
    with u the residualized double-demeaned treatment and denom = E[sum_t u_t D_t]. The sum splits into
    post-period CATT and xi, pre-period xi of treated groups, the never-treated xi term and the
    parallel-trends violation term.
    """
    panel = table.as_panel()
    T = table.T
    nt, lam, Lambda0 = _never_projection(table)
    u, _ = residualized_treatment(panel, region_fe=False)
    mass = table.mass
    D = table.treat
    denom = float(np.sum(mass[:, None] * u * D))
    if abs(denom) <= 1e-14:
        raise EstimationError(f"{table.name}: zero post-period residual treatment mass")
    alpha = fit_fe_twfe(panel).alpha

    parts = {"catt": 0.0, "post_xi": 0.0, "pre_xi": 0.0, "never_xi": 0.0, "ptv": 0.0}
    cells: Dict[Tuple[int, int], Dict[str, float]] = {}
    for g in sorted(int(v) for v in np.unique(table.group)):
        rows = np.flatnonzero(table.group == g)
        base = g - 1
        m = mass[rows]
        for t in range(1, T + 1):
            ut = u[rows, t - 1]
            xi = np.zeros(len(rows)) if t == base else _xi_rows(table, rows, t, base, nt, lam, Lambda0)
            xi_c = float(np.sum(m * ut * xi)) / denom
            if g == table.never_index:
                parts["never_xi"] += xi_c
                continue
            ptv = table.shift[rows, t - 1] - table.shift[rows, base - 1]
            ptv_c = float(np.sum(m * ut * ptv)) / denom
            catt_c = float(np.sum(m * ut * table.tau[rows, t - 1])) / denom if t >= g else 0.0
            parts["ptv"] += ptv_c
            if t >= g:
                parts["catt"] += catt_c
                parts["post_xi"] += xi_c
            else:
                parts["pre_xi"] += xi_c
            cells[(g, t)] = {"catt": catt_c, "xi": xi_c, "ptv": ptv_c}

    terms = MultiPeriodTerms(
        alpha=alpha,
        denominator=denom,
        weighted_catt=parts["catt"],
        post_xi=parts["post_xi"],
        pre_xi=parts["pre_xi"],
        never_xi=parts["never_xi"],
        pt_violation=parts["ptv"],
        cells=cells,
    )
    if abs(terms.closure_error) > MULTI_PERIOD_TOL * max(1.0, abs(alpha)):
        raise DecompositionError(f"{table.name}: multi-period decomposition misses alpha by {terms.closure_error:.3e}")
    return terms


def mb_grid(table: PopulationTable) -> List[MbTerms]:
    """MB terms for every treated group and every period except its base."""
    out: List[MbTerms] = []
    for g in sorted(int(v) for v in np.unique(table.group) if v <= table.T):
        out += [mb_decomposition(table, g, t) for t in range(1, table.T + 1) if t != g - 1]
    return out
