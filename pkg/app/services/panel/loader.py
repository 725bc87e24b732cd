from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from app.domain.errors import PanelValidationError
from app.domain.panel import PanelDataset
from app.domain.schemas import PanelSchema, ValidationReport
from app.services.panel.transforms import derive_groups, treatment_issues
from app.utils.logging import get_logger

logger = get_logger(__name__)

MIN_GROUP_WARN = 5


def read_long_csv(path: Path, schema: PanelSchema) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"panel file not found: {path}")
    dtypes = {schema.unit: str}
    if schema.region:
        dtypes[schema.region] = str
    return pd.read_csv(path, dtype=dtypes, float_precision="round_trip")


def load_long_csv(path: Path, schema: PanelSchema, *, drop_always_treated: bool = False) -> PanelDataset:
    """Read, validate and convert a long CSV panel. Raises PanelValidationError with the full report."""
    frame = read_long_csv(path, schema)
    report, data = _parse(frame, schema, drop_always_treated)
    if data is None:
        first = report.errors[0]
        raise PanelValidationError(f"{first.message}" + (f" ({first.location})" if first.location else ""), report=report)
    logger.info(f"Loaded panel {path}: n={data.n}, T={data.T}, k={data.k}, l={data.l}")
    return data


def validate_long_csv(path: Path, schema: PanelSchema, *, drop_always_treated: bool = False) -> ValidationReport:
    frame = read_long_csv(path, schema)
    return validate_long_frame(frame, schema, drop_always_treated=drop_always_treated)


def validate_long_frame(frame: pd.DataFrame, schema: PanelSchema, *, drop_always_treated: bool = False) -> ValidationReport:
    """Collect every issue of a long frame instead of stopping at the first."""
    report, _ = _parse(frame, schema, drop_always_treated)
    return report


def frame_to_dataset(frame: pd.DataFrame, schema: PanelSchema, *, drop_always_treated: bool = False) -> PanelDataset:
    report, data = _parse(frame, schema, drop_always_treated)
    if data is None:
        raise PanelValidationError(report.errors[0].message, report=report)
    return data


def write_long_csv(data: PanelDataset, path: Path, schema: Optional[PanelSchema] = None) -> PanelSchema:
    """
    Write a dataset as long CSV with a group column (0 = never treated).
    Floats use 17 significant digits so reading back is bit-exact.
    """
    schema = schema or default_schema(data)
    if schema.group is None:
        raise ValueError("writing needs a schema with a 'group' column")
    n, T = data.n, data.T
    cols: Dict[str, np.ndarray] = {
        schema.unit: np.repeat(np.asarray(data.unit_ids, dtype=object), T),
        schema.time: np.tile(np.asarray(data.periods), n),
    }
    if data.outcome is not None:
        if not schema.outcome:
            raise ValueError("dataset has an outcome but schema maps none")
        cols[schema.outcome] = data.outcome.reshape(-1)
    group_labels = np.array([0 if g == data.never_index else data.label(int(g)) for g in data.group])
    cols[schema.group] = np.repeat(group_labels, T)
    for j, name in enumerate(schema.tv):
        cols[name] = data.tv[:, :, j].reshape(-1)
    for j, name in enumerate(schema.ti):
        cols[name] = np.repeat(data.ti[:, j], T)
    if schema.weight:
        cols[schema.weight] = np.repeat(data.sample_weight, T)
    if schema.region and data.region is not None:
        cols[schema.region] = np.repeat(data.region, T)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")
    return schema


def default_schema(data: PanelDataset) -> PanelSchema:
    return PanelSchema(
        unit="unit",
        time="time",
        outcome="y" if data.outcome is not None else None,
        group="g",
        tv=list(data.tv_names),
        ti=list(data.ti_names),
        weight="weight",
        region="region" if data.region is not None else None,
    )


# ---------- Parsing ----------

def _numeric(frame: pd.DataFrame, col: str, report: ValidationReport) -> pd.Series:
    raw = frame[col]
    values = pd.to_numeric(raw, errors="coerce")
    missing = raw.isna()
    bad = values.isna() & ~missing
    if missing.any():
        report.error("missing_value", f"missing value in column '{col}'", f"row {int(np.flatnonzero(missing)[0])}")
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        report.error("non_numeric", f"non-numeric cell in column '{col}': {raw.iloc[i]!r}", f"row {i}")
    return values.astype(float)


def _constant_within(frame: pd.DataFrame, unit: str, col: str, report: ValidationReport, what: str) -> None:
    counts = frame.groupby(unit, sort=False)[col].nunique(dropna=False)
    varying = counts[counts > 1]
    for u in varying.index[:5]:
        report.error("ti_varies", f"{what} column varies within unit: '{col}'", f"unit {u}")


def _parse(
    frame: pd.DataFrame,
    schema: PanelSchema,
    drop_always_treated: bool,
) -> Tuple[ValidationReport, Optional[PanelDataset]]:
    report = ValidationReport()

    missing_cols = [c for c in schema.columns() if c not in frame.columns]
    for c in missing_cols:
        report.error("missing_column", f"missing column: '{c}'")
    if missing_cols:
        return report, None

    frame = frame[schema.columns()].copy()
    frame[schema.unit] = frame[schema.unit].astype(str)

    numeric_cols = [schema.time] + [c for c in (schema.outcome, schema.treat, schema.group, schema.weight) if c]
    numeric_cols += list(schema.tv) + list(schema.ti)
    for c in numeric_cols:
        frame[c] = _numeric(frame, c, report)
    if not report.ok:
        return report, None

    times = frame[schema.time]
    if not np.all(times == np.round(times)):
        report.error("non_integer_period", f"period labels in '{schema.time}' must be integers")
        return report, None
    frame[schema.time] = times.astype(np.int64)

    if frame.duplicated([schema.unit, schema.time]).any():
        dup = frame[frame.duplicated([schema.unit, schema.time], keep=False)].iloc[0]
        report.error("duplicate_observation", "multiple observations per unit-period",
                     f"unit {dup[schema.unit]}, period {dup[schema.time]}")
        return report, None

    frame = frame.sort_values([schema.unit, schema.time], kind="mergesort").reset_index(drop=True)
    periods = sorted(int(p) for p in frame[schema.time].unique())
    if len(periods) < 2:
        report.error("too_few_periods", "panel needs at least two periods")
        return report, None
    if np.any(np.diff(periods) != 1):
        report.error("non_consecutive_periods", f"periods are not consecutive: {periods}")

    per_unit = frame.groupby(schema.unit, sort=True)[schema.time].apply(set)
    full = set(periods)
    for u, seen in per_unit.items():
        lacking = sorted(full - seen)
        if lacking:
            report.error("unbalanced_panel", f"unbalanced panel: unit {u} lacks period {lacking[0]}", f"unit {u}")
    if not report.ok:
        return report, None

    for c in schema.ti:
        _constant_within(frame, schema.unit, c, report, "time-invariant")
    for c in (schema.weight, schema.region, schema.group):
        if c:
            _constant_within(frame, schema.unit, c, report, "per-unit")
    if schema.weight:
        nonpos = frame[frame[schema.weight] <= 0]
        if len(nonpos):
            report.error("nonpositive_weight", "sample weights must be strictly positive", f"unit {nonpos.iloc[0][schema.unit]}")
    if not report.ok:
        return report, None

    T = len(periods)
    units = list(per_unit.index)
    n = len(units)

    def wide(col: str) -> np.ndarray:
        return frame[col].to_numpy(dtype=float).reshape(n, T)

    # Treatment -> groups
    if schema.treat:
        D = wide(schema.treat)
    else:
        D = _groups_to_treat(wide(schema.group)[:, 0], periods, report)
        if D is None:
            return report, None

    keep = np.ones(n, dtype=bool)
    if drop_always_treated:
        first = D[:, 0] == 1
        if first.any():
            keep = ~first
            logger.info(f"Dropping {int(first.sum())} units treated in the first period")
            report.warn("dropped_always_treated", f"dropped {int(first.sum())} units treated in period {periods[0]}")
    for row, code, msg in treatment_issues(D[keep]):
        unit = np.asarray(units)[keep][row]
        report.error(code, msg, f"unit {unit}")
    if not report.ok:
        return report, None
    if not keep.any():
        report.error("empty_panel", "no units left after dropping always-treated units")
        return report, None

    idx = np.flatnonzero(keep)
    group = derive_groups(D[idx])
    tv = np.stack([wide(c) for c in schema.tv], axis=2) if schema.tv else np.zeros((n, T, 0))
    ti = np.column_stack([wide(c)[:, 0] for c in schema.ti]) if schema.ti else np.zeros((n, 0))
    weight = wide(schema.weight)[:, 0] if schema.weight else np.ones(n)
    region = None
    if schema.region:
        region = frame[schema.region].to_numpy(dtype=object).reshape(n, T)[:, 0].astype(str)[idx]

    data = PanelDataset(
        unit_ids=tuple(units[i] for i in idx),
        periods=tuple(periods),
        outcome=wide(schema.outcome)[idx] if schema.outcome else None,
        group=group,
        tv=tv[idx],
        tv_names=tuple(schema.tv),
        ti=ti[idx],
        ti_names=tuple(schema.ti),
        sample_weight=weight[idx],
        region=region,
    )

    report.n_units = data.n
    report.n_periods = data.T
    sizes: Dict[str, int] = {}
    for g in np.unique(data.group):
        label = data.group_label(int(g))
        sizes["never" if label is None else str(label)] = int((data.group == g).sum())
    report.group_sizes = sizes
    if not data.never_treated.any():
        report.warn("no_never_treated", "no never-treated units; multi-period TWFE weights and never-treated comparisons unavailable")
    for label, size in sizes.items():
        if size < MIN_GROUP_WARN:
            report.warn("small_group", f"group {label} has only {size} units", f"group {label}")
    return report, data


def _groups_to_treat(
    labels: np.ndarray,
    periods: List[int],
    report: ValidationReport,
) -> Optional[np.ndarray]:
    """Group column (first treated period label, 0 or beyond the panel = never) -> n x T indicators."""
    if not np.all(labels == np.round(labels)):
        report.error("non_integer_group", "group labels must be integers")
        return None
    first, last = periods[0], periods[-1]
    D = np.zeros((len(labels), len(periods)))
    for i, g in enumerate(labels.astype(np.int64)):
        if g == 0 or g > last:
            continue
        # at or before the first period: treated throughout, rejected or dropped downstream
        start = periods.index(int(g)) if g >= first else 0
        D[i, start:] = 1
    return D
