from typing import List, Optional, Tuple

import numpy as np

from app.domain.errors import PanelValidationError
from app.domain.panel import PanelDataset, TwoPeriodView
from app.domain.schemas import ValidationReport


# ---------- Groups ----------

def treatment_issues(treat: np.ndarray) -> List[Tuple[int, str, str]]:
    """
    (row, code, message) for every row of an n x T 0/1 matrix that breaks staggered adoption.
    """
    D = np.asarray(treat)
    issues: List[Tuple[int, str, str]] = []
    if D.ndim != 2:
        raise ValueError(f"treatment matrix must be 2-D, got shape {D.shape}")
    bad_values = ~np.isin(D, (0, 1))
    for i in np.flatnonzero(bad_values.any(axis=1)):
        issues.append((int(i), "treat_not_binary", "treatment indicator must be 0/1"))
    reversal = (np.diff(D, axis=1) < 0).any(axis=1)
    for i in np.flatnonzero(reversal & ~bad_values.any(axis=1)):
        issues.append((int(i), "treatment_reversal", "treatment reversal; staggered adoption violated"))
    first = D[:, 0] == 1
    for i in np.flatnonzero(first):
        issues.append((int(i), "treated_first_period", "treated in period 1"))
    return issues


def derive_groups(treat_indicator: np.ndarray) -> np.ndarray:
    """
    G_i = first period index (1-based) with D_it = 1, or T+1 for never-treated rows.
    """
    D = np.asarray(treat_indicator)
    issues = treatment_issues(D)
    if issues:
        row, code, msg = issues[0]
        report = ValidationReport()
        for r, c, m in issues:
            report.error(c, m, f"row {r}")
        raise PanelValidationError(f"{msg} (row {row})", report=report)
    T = D.shape[1]
    ever = D.any(axis=1)
    first = np.argmax(D == 1, axis=1) + 1
    return np.where(ever, first, T + 1).astype(int)


# ---------- Views ----------

def two_period_view(data: PanelDataset, t_star: int) -> TwoPeriodView:
    """
    First-difference view around period label `t_star`; every unit is either first treated at
    t_star or not yet treated by it.
    """
    s = data.index(t_star)
    if s < 2:
        raise PanelValidationError(f"t_star={t_star} has no preceding period")
    if np.any(data.group < s):
        raise PanelValidationError(f"not a two-group design at t_star={t_star}")

    X_pre = data.tv[:, s - 2, :]
    X_post = data.tv[:, s - 1, :]
    dY = None
    if data.outcome is not None:
        dY = data.outcome[:, s - 1] - data.outcome[:, s - 2]
    return TwoPeriodView(
        t_star=int(t_star),
        treat=(data.group == s).astype(float),
        dY=dY,
        dX=X_post - X_pre,
        X_pre=X_pre,
        X_post=X_post,
        Z=data.ti,
        sample_weight=data.sample_weight,
        tv_names=data.tv_names,
        ti_names=data.ti_names,
    )


# ---------- Fixed effects ----------

def _demean_block(m: np.ndarray, w: np.ndarray) -> np.ndarray:
    row = m.mean(axis=1, keepdims=True)
    col = np.average(m, axis=0, weights=w)[None, ...]
    grand = np.average(row, axis=0, weights=w)[None, ...]
    return m - row - col + grand


def double_demean(matrix: np.ndarray, weights: np.ndarray, cells: Optional[np.ndarray] = None) -> np.ndarray:
    """
    m[i,t] - rowmean_i - weighted colmean_t + weighted grand mean.

    Accepts n x T or n x T x k. With `cells` (one label per unit) the transform is applied
    within each block of units, which absorbs unit and cell-by-period effects.
    """
    m = np.asarray(matrix, dtype=float)
    w = np.asarray(weights, dtype=float)
    if m.ndim < 2 or m.shape[0] != w.shape[0]:
        raise ValueError(f"shape mismatch: matrix {m.shape}, weights {w.shape}")
    if cells is None:
        return _demean_block(m, w)

    out = np.empty_like(m)
    labels = np.asarray(cells)
    for c in np.unique(labels):
        sel = labels == c
        out[sel] = _demean_block(m[sel], w[sel])
    return out
