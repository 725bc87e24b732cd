import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from app.domain.errors import CollinearityError
from app.utils.logging import get_logger

logger = get_logger(__name__)

PIVOT_TOL = 1e-10


@dataclass
class LinearProjection:
    """
    Weighted least-squares projection of a response on a design.

    Coefficients are ordered like `labels` (intercept first when present). The pivoted
    triangular factor of the sqrt-weight scaled design is kept so other right-hand sides
    can be solved against the same normalized Gram matrix X'WX / sum(w).
    """
    coefficients: np.ndarray
    labels: List[str]
    intercept: bool
    fitted: np.ndarray
    residuals: np.ndarray
    _r: np.ndarray = field(repr=False)
    _piv: np.ndarray = field(repr=False)

    def predict(self, design: np.ndarray) -> np.ndarray:
        return _with_intercept(design, self.intercept) @ self.coefficients

    def gram_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve (X'WX / sum w) z = rhs."""
        rhs = np.asarray(rhs, dtype=float)
        y = solve_triangular(self._r, rhs[self._piv], trans="T")
        zp = solve_triangular(self._r, y)
        z = np.empty_like(zp)
        z[self._piv] = zp
        return z


def _with_intercept(design: np.ndarray, intercept: bool) -> np.ndarray:
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if intercept:
        X = np.column_stack([np.ones(X.shape[0]), X])
    return X


def _check_weights(weights: Optional[np.ndarray], n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},), got {w.shape}")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    return w


def collinear_columns(scaled: np.ndarray, labels: Sequence[str]) -> List[str]:
    """Columns that add no rank when entered in order."""
    kept: List[int] = []
    offending: List[str] = []
    for j in range(scaled.shape[1]):
        trial = scaled[:, kept + [j]]
        if np.linalg.matrix_rank(trial) == len(kept) + 1:
            kept.append(j)
        else:
            offending.append(labels[j])
    return offending


def factor(scaled: np.ndarray, labels: Sequence[str]):
    """Pivoted QR of an already weight-scaled design; raises on rank deficiency."""
    p = scaled.shape[1]
    if p == 0:
        return np.zeros((scaled.shape[0], 0)), np.zeros((0, 0)), np.zeros(0, dtype=int)
    q, r, piv = qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > PIVOT_TOL * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < p:
        cols = collinear_columns(scaled, labels) or [labels[j] for j in piv[rank:]]
        raise CollinearityError(cols)
    return q, r, piv


def linear_projection(
    design: np.ndarray,
    response: np.ndarray,
    weights: Optional[np.ndarray] = None,
    intercept: bool = True,
    labels: Optional[Sequence[str]] = None,
) -> LinearProjection:
    """
    Weighted linear projection of `response` (n or n x m) on `design` (n x p).
    Rank deficiency raises CollinearityError naming the redundant columns.
    """
    X = _with_intercept(design, intercept)
    n, p = X.shape
    y = np.asarray(response, dtype=float)
    if y.shape[0] != n:
        raise ValueError(f"response has {y.shape[0]} rows, design has {n}")
    w = _check_weights(weights, n)

    names = list(labels) if labels is not None else [f"x{j}" for j in range(p - int(intercept))]
    if intercept:
        names = ["intercept"] + names
    if len(names) != p:
        raise ValueError(f"{len(names)} labels for {p} design columns")

    sw = np.sqrt(w / w.sum())
    scaled = X * sw[:, None]
    q, r, piv = factor(scaled, names)

    if p == 0:
        coef = np.zeros((0,) + y.shape[1:])
    else:
        ys = y * (sw[:, None] if y.ndim == 2 else sw)
        coef_piv = solve_triangular(r, q.T @ ys)
        coef = np.empty_like(coef_piv)
        coef[piv] = coef_piv
    fitted = X @ coef if p else np.zeros_like(y)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Projection on {names}: coef={np.round(coef, 6).tolist()}")
    return LinearProjection(
        coefficients=coef,
        labels=names,
        intercept=intercept,
        fitted=fitted,
        residuals=y - fitted,
        _r=r,
        _piv=piv,
    )
