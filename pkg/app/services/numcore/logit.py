import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve
from scipy.special import expit

from app.domain.errors import EstimationError, SeparationError
from app.services.numcore.projection import _check_weights, _with_intercept, factor
from app.utils.logging import get_logger

logger = get_logger(__name__)

MAX_ITER = 100
SCORE_TOL = 1e-8
DIVERGENCE_NORM = 1e3


@dataclass
class PropensityModel:
    coefficients: np.ndarray
    labels: List[str]
    intercept: bool
    converged: bool
    iterations: int
    max_score: float
    ridge: float = 0.0

    def predict(self, design: np.ndarray) -> np.ndarray:
        return expit(_with_intercept(design, self.intercept) @ self.coefficients)


def _penalized_loglik(X: np.ndarray, y: np.ndarray, wn: np.ndarray, beta: np.ndarray, pen: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(wn * (y * eta - np.logaddexp(0.0, eta))) - 0.5 * np.sum(pen * beta ** 2))


def logit_fit(
    design: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
    intercept: bool = True,
    ridge: float = 0.0,
    names: Optional[Sequence[str]] = None,
    max_iter: int = MAX_ITER,
    tol: float = SCORE_TOL,
) -> PropensityModel:
    """
    Weighted logistic regression by Newton / IRLS with step halving.

    The score is normalized by the total weight, sum w (y - p) x / sum w, and the fit stops once
    its largest component is below `tol`. A ridge penalty (intercept excluded) is available for
    nearly separated data.
    """
    X = _with_intercept(design, intercept)
    n, p = X.shape
    if p == 0:
        raise ValueError("logit needs at least one design column")
    y = np.asarray(labels, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {y.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary")
    w = _check_weights(weights, n)
    if w[y == 1].sum() <= 0 or w[y == 0].sum() <= 0:
        raise EstimationError("logit needs both label classes with positive weight")

    cols = list(names) if names is not None else [f"x{j}" for j in range(p - int(intercept))]
    if intercept:
        cols = ["intercept"] + cols
    wn = w / w.sum()
    factor(X * np.sqrt(wn)[:, None], cols)

    pen = np.full(p, float(ridge))
    if intercept:
        pen[0] = 0.0
    beta = np.zeros(p)
    if intercept:
        ybar = float(np.sum(wn * y))
        beta[0] = np.log(ybar / (1.0 - ybar))

    it = 0
    score = X.T @ (wn * (y - expit(X @ beta))) - pen * beta
    converged = bool(np.max(np.abs(score)) <= tol)
    while not converged and it < max_iter:
        it += 1
        prob = expit(X @ beta)
        hess = (X * (wn * prob * (1.0 - prob))[:, None]).T @ X + np.diag(pen)
        try:
            step = solve(hess, score, assume_a="sym")
        except LinAlgError as e:
            raise SeparationError(
                "logit Hessian is singular (likely separation); enable trimming or a ridge penalty"
            ) from e

        ll0 = _penalized_loglik(X, y, wn, beta, pen)
        t = 1.0
        while t > 1e-10 and _penalized_loglik(X, y, wn, beta + t * step, pen) < ll0 - 1e-14 * abs(ll0):
            t *= 0.5
        beta = beta + t * step
        if np.linalg.norm(beta) > DIVERGENCE_NORM:
            raise SeparationError(
                f"logit coefficients diverge (norm > {DIVERGENCE_NORM:g}); data are (quasi-)separated. "
                "Enable trimming or a ridge penalty"
            )
        score = X.T @ (wn * (y - expit(X @ beta))) - pen * beta
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(f"logit iter {it}: step={t:g}, max|score|={np.max(np.abs(score)):.3e}")
        converged = bool(np.max(np.abs(score)) <= tol)

    fitted = expit(X @ beta)
    if not converged:
        if fitted.min() < 1e-10 or fitted.max() > 1 - 1e-10:
            raise SeparationError(
                "logit did not converge and fitted probabilities hit 0/1 (quasi-separation); "
                "enable trimming or a ridge penalty"
            )
        logger.warning(f"logit did not converge in {max_iter} iterations (max|score|={np.max(np.abs(score)):.2e})")

    return PropensityModel(
        coefficients=beta,
        labels=cols,
        intercept=intercept,
        converged=converged,
        iterations=it,
        max_score=float(np.max(np.abs(score))),
        ridge=float(ridge),
    )
