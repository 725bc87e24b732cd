from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.domain.errors import EstimationError, NoResidualVariationError
from app.domain.panel import PanelDataset, TwoPeriodView
from app.services.numcore.projection import linear_projection
from app.services.panel.transforms import double_demean
from app.utils.logging import get_logger

logger = get_logger(__name__)

RESIDUAL_TOL = 1e-12


@dataclass
class TwfeFit:
    alpha: float
    beta: np.ndarray
    labels: List[str]
    n: int
    T: int
    method: str                      # "fd" | "fe"
    region_fe: bool = False


def _require_dy(view: TwoPeriodView) -> np.ndarray:
    if view.dY is None:
        raise EstimationError("TWFE estimation needs an outcome")
    return view.dY


def _require_both_classes(view: TwoPeriodView) -> None:
    n1 = int(view.treat.sum())
    if n1 == 0 or n1 == view.n:
        raise EstimationError("single-class treatment: need treated and untreated units")


def fit_fd_twfe(view: TwoPeriodView) -> TwfeFit:
    """Weighted OLS of dY on (1, D, dX); alpha is the D coefficient."""
    dY = _require_dy(view)
    _require_both_classes(view)
    design = np.column_stack([view.treat, view.dX])
    labels = ["treat"] + [f"d.{x}" for x in view.tv_names]
    proj = linear_projection(design, dY, view.sample_weight, intercept=True, labels=labels)
    alpha = float(proj.coefficients[1])
    logger.info(f"First-difference TWFE at t*={view.t_star}: alpha={alpha:.6g}")
    return TwfeFit(
        alpha=alpha,
        beta=proj.coefficients[2:].copy(),
        labels=labels[1:],
        n=view.n,
        T=2,
        method="fd",
    )


def treatment_residual(view: TwoPeriodView) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    (L, u, E[u^2]) with L the weighted projection of D on (1, dX) and u = D - L.
    """
    _require_both_classes(view)
    w = view.sample_weight
    labels = [f"d.{x}" for x in view.tv_names]
    L = linear_projection(view.dX, view.treat, w, intercept=True, labels=labels).fitted
    u = view.treat - L
    den = float(np.sum(w * u ** 2) / w.sum())
    if den <= RESIDUAL_TOL:
        raise NoResidualVariationError("no residual treatment variation: D is explained by the covariates")
    return L, u, den


def fwl_alpha(view: TwoPeriodView) -> float:
    """alpha = sum w u dY / sum w u^2 with u the residual of D on (1, dX)."""
    dY = _require_dy(view)
    _, u, den = treatment_residual(view)
    w = view.sample_weight
    return float(np.sum(w * u * dY) / w.sum() / den)


def demeaned_design(data: PanelDataset, region_fe: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Double-demeaned treatment (n x T) and covariates (n x T x k)."""
    cells = data.region if region_fe else None
    if region_fe and data.region is None:
        raise EstimationError("region-by-period effects requested but the panel has no region column")
    w = data.sample_weight
    D_dd = double_demean(data.treat_matrix, w, cells)
    X_dd = double_demean(data.tv, w, cells) if data.k else np.zeros((data.n, data.T, 0))
    return D_dd, X_dd


def residualized_treatment(data: PanelDataset, region_fe: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    (u, Gamma): u_it = D_dd - X_dd' Gamma with Gamma the pooled projection of D_dd on X_dd.
    """
    D_dd, X_dd = demeaned_design(data, region_fe)
    n, T = D_dd.shape
    wl = np.repeat(data.sample_weight, T)
    d = D_dd.reshape(-1)
    if np.sum(wl * d ** 2) / wl.sum() <= RESIDUAL_TOL:
        raise NoResidualVariationError("no residual treatment variation after removing fixed effects")
    if data.k == 0:
        return D_dd, np.zeros(0)
    X = X_dd.reshape(n * T, data.k)
    proj = linear_projection(X, d, wl, intercept=False, labels=list(data.tv_names))
    u = proj.residuals.reshape(n, T)
    if np.sum(wl * proj.residuals ** 2) / wl.sum() <= RESIDUAL_TOL:
        raise NoResidualVariationError("no residual treatment variation: D is explained by the covariates")
    return u, proj.coefficients


def fit_fe_twfe(data: PanelDataset, region_fe: bool = False) -> TwfeFit:
    """
    Within estimator: weighted OLS without intercept of double-demeaned Y on double-demeaned (D, X).
    With `region_fe` the demeaning runs inside region blocks (unit plus region-by-period effects).
    """
    Y = data.require_outcome()
    residualized_treatment(data, region_fe)
    D_dd, X_dd = demeaned_design(data, region_fe)
    cells = data.region if region_fe else None
    Y_dd = double_demean(Y, data.sample_weight, cells)

    n, T = Y.shape
    design = np.column_stack([D_dd.reshape(-1), X_dd.reshape(n * T, data.k)])
    labels = ["treat"] + list(data.tv_names)
    wl = np.repeat(data.sample_weight, T)
    proj = linear_projection(design, Y_dd.reshape(-1), wl, intercept=False, labels=labels)
    alpha = float(proj.coefficients[0])
    logger.info(f"Fixed-effects TWFE: n={n}, T={T}, region_fe={region_fe}, alpha={alpha:.6g}")
    return TwfeFit(
        alpha=alpha,
        beta=proj.coefficients[1:].copy(),
        labels=list(data.tv_names),
        n=n,
        T=T,
        method="fe",
        region_fe=region_fe,
    )


def never_treated_projection(data: PanelDataset) -> Tuple[np.ndarray, np.ndarray]:
    """
    (lambda_t, Lambda0): Lambda0 from a TWFE regression of Y on X over never-treated units,
    lambda_t the never-treated weighted mean of Y_t - X_t' Lambda0.
    """
    Y = data.require_outcome()
    nt = data.never_treated
    if not nt.any():
        raise EstimationError("never-treated group is empty")
    w = data.sample_weight[nt]
    Y0 = Y[nt]
    X0 = data.tv[nt]
    T = data.T
    if data.k:
        Y_dd = double_demean(Y0, w)
        X_dd = double_demean(X0, w)
        wl = np.repeat(w, T)
        proj = linear_projection(
            X_dd.reshape(-1, data.k), Y_dd.reshape(-1), wl, intercept=False, labels=list(data.tv_names)
        )
        Lambda0 = proj.coefficients
    else:
        Lambda0 = np.zeros(0)
    resid = Y0 - X0 @ Lambda0 if data.k else Y0
    lam = np.average(resid, axis=0, weights=w)
    return lam, Lambda0
