from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.domain.options import Comparison, CovariateMode, Method
from app.domain.states import RunState


SCHEMA_VERSION = "1.0"


# Panel ingestion
class PanelSchema(BaseModel):
    """
    Column mapping for a long CSV panel.
    Exactly one of `treat` (0/1 per unit-period) or `group` (first treated period, 0 = never) is required.
    """
    model_config = ConfigDict(extra="forbid")

    unit: str = Field(..., min_length=1)
    time: str = Field(..., min_length=1)
    outcome: Optional[str] = None
    treat: Optional[str] = None
    group: Optional[str] = None
    tv: List[str] = Field(default_factory=list, description="Time-varying covariates")
    ti: List[str] = Field(default_factory=list, description="Time-invariant covariates")
    weight: Optional[str] = None
    region: Optional[str] = None

    @model_validator(mode="after")
    def _check_columns(self) -> "PanelSchema":
        if (self.treat is None) == (self.group is None):
            raise ValueError("schema needs exactly one of 'treat' or 'group'")
        names = [self.unit, self.time, *self.tv, *self.ti]
        names += [c for c in (self.outcome, self.treat, self.group, self.weight, self.region) if c]
        dupes = sorted({c for c in names if names.count(c) > 1})
        if dupes:
            raise ValueError(f"columns mapped more than once: {dupes}")
        return self

    def columns(self) -> List[str]:
        cols = [self.unit, self.time]
        cols += [c for c in (self.outcome, self.treat, self.group) if c]
        cols += list(self.tv) + list(self.ti)
        cols += [c for c in (self.weight, self.region) if c]
        return cols


class ValidationIssue(BaseModel):
    code: str
    message: str
    location: Optional[str] = None


class ValidationReport(BaseModel):
    errors: List[ValidationIssue] = Field(default_factory=list)
    warnings: List[ValidationIssue] = Field(default_factory=list)
    n_units: int = 0
    n_periods: int = 0
    group_sizes: Dict[str, int] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.errors

    def error(self, code: str, message: str, location: Optional[str] = None) -> None:
        self.errors.append(ValidationIssue(code=code, message=message, location=location))

    def warn(self, code: str, message: str, location: Optional[str] = None) -> None:
        self.warnings.append(ValidationIssue(code=code, message=message, location=location))


# Nuisance model specification
class CovariateModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: CovariateMode = CovariateMode.DELTA_PLUS_BASE
    include_ti: bool = True
    interactions: List[Tuple[str, str]] = Field(default_factory=list)


class CovariateSpec(CovariateModel):
    """
    Shared covariate specification with optional per-model overrides.
    """
    outcome: Optional[CovariateModel] = None
    propensity: Optional[CovariateModel] = None

    def base(self) -> CovariateModel:
        return CovariateModel(mode=self.mode, include_ti=self.include_ti, interactions=self.interactions)

    def for_outcome(self) -> CovariateModel:
        return self.outcome or self.base()

    def for_propensity(self) -> CovariateModel:
        return self.propensity or self.base()


class EstimationOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    comparison: Comparison = Comparison.NEVER_TREATED
    anticipation: int = Field(0, ge=0)
    trim: bool = False
    min_group_size: Optional[int] = Field(None, ge=1)
    ridge: float = Field(0.0, ge=0.0)
    pre_periods: bool = True
    region_fe: bool = False
    threads: int = Field(1, ge=1)


# Results
class GroupTimeResult(BaseModel):
    g: int
    t: int
    event_time: int
    att: float
    se: Optional[float] = None
    estimator: Method
    comparison: Comparison
    base_period: int
    n_treated: int
    n_comparison: int
    max_pscore: Optional[float] = None
    trimmed_comparison: int = 0
    fallback: bool = False
    post: bool = True


class AggregateValue(BaseModel):
    label: str
    estimate: float
    se: Optional[float] = None


class ComponentWeight(BaseModel):
    g: int
    t: int
    weight: float


class AggregateResult(BaseModel):
    kind: str  # "overall" | "event_study"
    values: List[AggregateValue]
    weights: Dict[str, List[ComponentWeight]] = Field(default_factory=dict)


# Balance
class NegativeWeightSummary(BaseModel):
    count: int
    share: float
    min_weight: Optional[float] = None
    unit_ids: List[str] = Field(default_factory=list)


class BalanceRow(BaseModel):
    label: str
    raw_std_diff: Optional[float] = None
    weighted_std_diff: Optional[float] = None
    degenerate: bool = False
    mean_target: float
    mean_comparison: float
    weighted_mean_target: float
    weighted_mean_comparison: float


class CellBalance(BaseModel):
    g: int
    t: int
    aggregation_weight: float
    rows: List[BalanceRow]


class BalanceReport(BaseModel):
    estimator: str
    rows: List[BalanceRow]
    ess_treated: float
    ess_comparison: float
    negative_treated: NegativeWeightSummary
    negative_comparison: NegativeWeightSummary
    cells: List[CellBalance] = Field(default_factory=list)


# Runs
class RunConfig(BaseModel):
    """
    Everything a run needs. Unknown keys are rejected.
    """
    model_config = ConfigDict(extra="forbid")

    input: Optional[Path] = None
    panel: Optional[PanelSchema] = None
    method: Method = Method.AIPW
    covariates: CovariateSpec = Field(default_factory=CovariateSpec)
    options: EstimationOptions = Field(default_factory=EstimationOptions)
    drop_always_treated: bool = False
    reps: int = Field(0, ge=0)
    seed: int = 12345
    functionals: List[str] = Field(default_factory=list)
    output_dir: Optional[Path] = None
    formats: List[str] = Field(default_factory=lambda: ["json", "csv"])

    @model_validator(mode="after")
    def _check_reps(self) -> "RunConfig":
        if self.reps == 1:
            raise ValueError("reps must be 0 (no bootstrap) or at least 2")
        bad = [f for f in self.formats if f not in ("json", "csv")]
        if bad:
            raise ValueError(f"unsupported output formats: {bad}")
        return self


class RunStatus(BaseModel):
    id: str
    kind: str
    state: RunState
    error: Optional[str] = None
    origin: Optional[str] = None      # run whose artifacts were reused
    createdAt: float
    updatedAt: float
