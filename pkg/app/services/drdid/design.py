import logging
from typing import List, Optional, Tuple

import numpy as np

from app.domain.errors import CollinearityError, DesignError
from app.domain.options import CovariateMode
from app.domain.panel import PanelDataset
from app.domain.schemas import CovariateModel
from app.utils.logging import get_logger

logger = get_logger(__name__)

CONSTANT_TOL = 1e-12


# ---------- Covariate functionals ----------

def _tv_position(data: PanelDataset, name: str) -> int:
    try:
        return data.tv_names.index(name)
    except ValueError:
        raise DesignError(f"unknown time-varying covariate: {name}") from None


def _ti_position(data: PanelDataset, name: str) -> int:
    try:
        return data.ti_names.index(name)
    except ValueError:
        raise DesignError(f"unknown time-invariant covariate: {name}") from None


def _period_index(data: PanelDataset, raw: str) -> int:
    try:
        return data.index(int(raw))
    except (KeyError, ValueError):
        raise DesignError(f"unknown period in covariate label: {raw}") from None


def _indicator(data: PanelDataset, body: str, base: int) -> np.ndarray:
    if "=" not in body:
        raise DesignError(f"indicator needs '<column>=<value>': ind.{body}")
    col, raw = body.split("=", 1)
    try:
        value = float(raw)
    except ValueError:
        raise DesignError(f"indicator value must be numeric: ind.{body}") from None
    if col in data.ti_names:
        values = data.ti[:, _ti_position(data, col)]
    elif col in data.tv_names:
        values = data.tv[:, base - 1, _tv_position(data, col)]
    else:
        raise DesignError(f"unknown covariate in indicator: {col}")
    return (values == value).astype(float)


def covariate_column(data: PanelDataset, label: str, t: int, base: int) -> np.ndarray:
    """
    Evaluate one covariate label for every unit, with t and base as internal period indices.

    d.<x>      X_t - X_base
    base.<x>   X_base
    post.<x>   X_t
    avg.<x>    mean of X over all periods
    <x>@<p>    X at period label p
    <z>        time-invariant covariate
    ind.<c>=v  indicator (time-varying c is read at base)
    a*b        product of two labels
    """
    label = label.strip()
    if "*" in label:
        parts = label.split("*")
        out = np.ones(data.n)
        for part in parts:
            out = out * covariate_column(data, part, t, base)
        return out
    if label.startswith("ind."):
        return _indicator(data, label[4:], base)
    if "@" in label:
        name, period = label.split("@", 1)
        return data.tv[:, _period_index(data, period) - 1, _tv_position(data, name)].copy()
    prefix, _, name = label.partition(".")
    if name:
        if prefix == "d":
            j = _tv_position(data, name)
            return data.tv[:, t - 1, j] - data.tv[:, base - 1, j]
        if prefix == "base":
            return data.tv[:, base - 1, _tv_position(data, name)].copy()
        if prefix == "post":
            return data.tv[:, t - 1, _tv_position(data, name)].copy()
        if prefix == "avg":
            return data.tv[:, :, _tv_position(data, name)].mean(axis=1)
    if label in data.ti_names:
        return data.ti[:, _ti_position(data, label)].copy()
    if label in data.tv_names:
        raise DesignError(f"time-varying covariate '{label}' needs a prefix (d., base., post., avg.) or @period")
    raise DesignError(f"unknown covariate label: {label}")


# ---------- Design assembly ----------

def design_labels(data: PanelDataset, model: CovariateModel) -> List[str]:
    """Column labels of the design implied by `model`, in assembly order."""
    names = list(data.tv_names)
    mode = CovariateMode(model.mode)
    if mode == CovariateMode.NONE:
        return []
    if mode == CovariateMode.DELTA_ONLY:
        labels = [f"d.{x}" for x in names]
    elif mode == CovariateMode.BASE_LEVEL:
        labels = [f"base.{x}" for x in names]
    elif mode == CovariateMode.DELTA_PLUS_BASE:
        labels = [f"d.{x}" for x in names] + [f"base.{x}" for x in names]
    elif mode == CovariateMode.AVERAGE:
        labels = [f"avg.{x}" for x in names]
    else:
        labels = [f"{x}@{p}" for x in names for p in data.periods]
    if model.include_ti:
        labels += list(data.ti_names)
    labels += [f"{a}*{b}" for a, b in model.interactions]
    return labels


def _assemble(data: PanelDataset, labels: List[str], t: int, base: int) -> np.ndarray:
    if not labels:
        return np.zeros((data.n, 0))
    return np.column_stack([covariate_column(data, lab, t, base) for lab in labels])


def build_design(
    data: PanelDataset,
    model: CovariateModel,
    g: int,
    t: int,
    base: int,
    rows: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[str]]:
    """
    Covariate design W for cell (g, t) with base period `base` (internal indices), all units.

    Columns constant over `rows` (all units when None) would duplicate the intercept and raise
    CollinearityError naming them.
    """
    if not 1 <= base < g:
        raise DesignError(f"base period index {base} must precede group index {g}")
    if not 1 <= t <= data.T:
        raise DesignError(f"period index {t} outside 1..{data.T}")

    labels = design_labels(data, model)
    W = _assemble(data, labels, t, base)
    if labels:
        sub = W if rows is None else W[rows]
        spread = np.ptp(sub, axis=0) if sub.shape[0] else np.zeros(len(labels))
        scale = np.maximum(1.0, np.max(np.abs(sub), axis=0)) if sub.shape[0] else np.ones(len(labels))
        constant = [lab for lab, s, c in zip(labels, spread, scale) if s <= CONSTANT_TOL * c]
        if constant:
            raise CollinearityError(constant, f"constant design column(s): {', '.join(constant)}")
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(f"Design for g={data.label(g)}, t={data.label(t)}, base={data.label(base)}: {labels}")
    return W, labels
