from typing import Tuple

import numpy as np

from app.domain.errors import DegenerateCovariateError


def weighted_mean_var(x: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """Weighted mean and variance, variance denominator sum(w)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total == 0:
        raise ValueError("weights sum to zero")
    mean = float(np.sum(w * x) / total)
    var = float(np.sum(w * (x - mean) ** 2) / total)
    return mean, var


def std_diff(mean_a: float, var_a: float, mean_b: float, var_b: float) -> float:
    """(mean_a - mean_b) / sqrt((var_a + var_b) / 2)."""
    if var_a < 0 or var_b < 0:
        raise ValueError("variances must be nonnegative")
    pooled = np.sqrt((var_a + var_b) / 2.0)
    if pooled == 0:
        if mean_a == mean_b:
            return 0.0
        raise DegenerateCovariateError(
            f"covariate has zero variance in both groups but different means ({mean_a:g} vs {mean_b:g})"
        )
    return float((mean_a - mean_b) / pooled)


def kish_ess(weights: np.ndarray) -> float:
    """Kish effective sample size (sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    sq = float(np.sum(w ** 2))
    if sq == 0:
        raise ValueError("effective sample size needs at least one nonzero weight")
    return float(np.sum(w)) ** 2 / sq
