import concurrent.futures
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from numpy.linalg import LinAlgError

from app.domain.errors import BootstrapError
from app.domain.panel import PanelDataset
from app.utils.logging import get_logger

logger = get_logger(__name__)

MAX_FAILURE_SHARE = 0.5


@dataclass
class BootstrapResult:
    se: np.ndarray
    reps: int
    failures: int
    draws: np.ndarray      # successful reps x estimates


def _draw(estimator: Callable[[PanelDataset], np.ndarray], data: PanelDataset, seed: int, rep: int, size: int) -> Optional[np.ndarray]:
    rng = np.random.default_rng([seed, rep])
    idx = rng.integers(0, data.n, size=data.n)
    try:
        out = np.asarray(estimator(data.take(idx)), dtype=float).reshape(-1)
    except (ValueError, LinAlgError) as e:
        logger.debug(f"bootstrap rep {rep} failed: {e}")
        return None
    if out.shape != (size,) or not np.isfinite(out).all():
        logger.debug(f"bootstrap rep {rep} failed: got {out.shape[0]} estimates, expected {size}")
        return None
    return out


def bootstrap_se(
    estimator: Callable[[PanelDataset], np.ndarray],
    data: PanelDataset,
    reps: int,
    seed: int,
    size: Optional[int] = None,
    threads: int = 1,
) -> BootstrapResult:
    """
    Unit-level nonparametric bootstrap. Rep r resamples units with a generator seeded by (seed, r),
    so results do not depend on thread scheduling. `estimator` maps a dataset to a vector of
    estimates; reps that raise or change the vector length count as failures and are dropped.
    """
    if reps < 2:
        raise ValueError("bootstrap needs at least 2 reps")
    if size is None:
        size = int(np.asarray(estimator(data)).reshape(-1).shape[0])

    draws: List[Optional[np.ndarray]] = [None] * reps
    if threads <= 1:
        for r in range(reps):
            draws[r] = _draw(estimator, data, seed, r, size)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            futs = {ex.submit(_draw, estimator, data, seed, r, size): r for r in range(reps)}
            for fut in concurrent.futures.as_completed(futs):
                draws[futs[fut]] = fut.result()

    ok = [d for d in draws if d is not None]
    failures = reps - len(ok)
    if failures > MAX_FAILURE_SHARE * reps or len(ok) < 2:
        raise BootstrapError(f"bootstrap unstable for this configuration ({failures}/{reps} reps failed)")
    stacked = np.vstack(ok)
    se = stacked.std(axis=0, ddof=1)
    logger.info(f"Bootstrap: {reps} reps, {failures} failed")
    return BootstrapResult(se=se, reps=reps, failures=failures, draws=stacked)
