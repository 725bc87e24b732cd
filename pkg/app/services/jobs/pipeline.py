import json
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from app.domain.errors import ConfigError, EstimationError
from app.domain.options import Method
from app.domain.panel import PanelDataset
from app.domain.schemas import SCHEMA_VERSION, AggregateResult, GroupTimeResult, RunConfig
from app.services.balance.loveplot import love_plot_svg
from app.services.balance.profiles import (
    WeightProfile,
    profile_from_aipw,
    profile_from_multi_period,
    profile_from_two_period,
)
from app.services.balance.report import balance_csv, balance_report
from app.services.drdid.aggregate import aggregate_event_study, aggregate_overall, aggregate_vector
from app.services.drdid.attgt import estimate_att_gt, implicit_weight_reports
from app.services.drdid.bootstrap import bootstrap_se
from app.services.panel.loader import load_long_csv
from app.services.panel.transforms import two_period_view
from app.services.twfe.estimators import fit_fd_twfe, fit_fe_twfe
from app.services.twfe.weights import TwfeWeightReport, mp_implicit_weights, two_period_implicit_weights
from app.utils.logging import get_logger

logger = get_logger(__name__)

ESTIMATES_JSON = "estimates.json"
ATT_GT_CSV = "att_gt.csv"
EVENT_STUDY_CSV = "event_study.csv"
TWFE_WEIGHTS_CSV = "twfe_weights.csv"
BALANCE_JSON = "balance.json"
BALANCE_CSV = "balance.csv"
LOVE_PLOT_SVG = "loveplot.svg"


def dumps(doc: Dict[str, Any]) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def _frame_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")


def _envelope(kind: str, config: RunConfig) -> Dict[str, Any]:
    config_echo = config.model_dump(mode="json", exclude={"output_dir"})
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "config": config_echo}


def _wants(config: RunConfig, fmt: str) -> bool:
    return fmt in config.formats


# ---------- Stage 1: panel ----------

def load_panel(config: RunConfig) -> PanelDataset:
    if config.input is None:
        raise ConfigError("no input panel given (set 'input' in the config or pass --input)")
    if config.panel is None:
        raise ConfigError("no panel column mapping given (set 'panel' in the config or pass column flags)")
    return load_long_csv(config.input, config.panel, drop_always_treated=config.drop_always_treated)


# ---------- Stage 2: weights and estimates ----------

def _twfe_weights(data: PanelDataset, config: RunConfig) -> TwfeWeightReport:
    if data.T == 2:
        return two_period_implicit_weights(two_period_view(data, data.periods[1]))
    return mp_implicit_weights(data, region_fe=config.options.region_fe)


def implicit_profile(data: PanelDataset, config: RunConfig) -> WeightProfile:
    """Implicit weights of the configured estimator for every post-treatment cell; no outcome needed."""
    method = Method(config.method)
    if method == Method.TWFE:
        report = _twfe_weights(data, config)
        if report.kind == "two_period":
            return profile_from_two_period(report, two_period_view(data, data.periods[1]), data)
        return profile_from_multi_period(report, data)
    reports = implicit_weight_reports(data, config.covariates, config.options, method)
    return profile_from_aipw(reports, data)


def _twfe_alpha(data: PanelDataset, config: RunConfig) -> float:
    if data.T == 2:
        return fit_fd_twfe(two_period_view(data, data.periods[1])).alpha
    return fit_fe_twfe(data, config.options.region_fe).alpha


def _twfe_document(data: PanelDataset, config: RunConfig) -> Dict[str, Any]:
    if data.T == 2:
        fit = fit_fd_twfe(two_period_view(data, data.periods[1]))
    else:
        fit = fit_fe_twfe(data, config.options.region_fe)
    report = _twfe_weights(data, config)

    se = None
    if config.reps:
        boot = bootstrap_se(
            lambda d: np.array([_twfe_alpha(d, config)]), data, config.reps, config.seed,
            size=1, threads=config.options.threads,
        )
        se = float(boot.se[0])

    if report.kind == "two_period":
        weights = [
            {"unit": u, "treated": bool(d), "weight": float(w)}
            for u, d, w in zip(data.unit_ids, report.treat, report.unit_weights)
        ]
    else:
        weights = [
            {
                "g": data.label(c.g),
                "t": data.label(c.t),
                "post": c.post,
                "sum_weight": c.sum_weight,
                "contribution": c.contribution,
            }
            for c in report.cells
        ]
    return {
        "method": Method.TWFE.value,
        "design": report.kind,
        "alpha": fit.alpha,
        "se": se,
        "beta": dict(zip(fit.labels, (float(b) for b in fit.beta))),
        "weights": weights,
        "sums": {
            "pre": report.pre_sum,
            "post": report.post_sum,
            "pre_contribution": report.pre_contribution,
            "post_contribution": report.post_contribution,
            "remainder": report.remainder,
            "pretrend_zeroed_alpha": report.pretrend_zeroed_alpha,
        },
        "group_shares": {
            ("never" if g == data.never_index else str(data.label(g))): s for g, s in report.group_shares.items()
        },
        "flags": {
            "negative_weight_count": report.negative_weight_count,
            "negative_treated": report.negative_treated,
            "negative_comparison": report.negative_comparison,
        },
    }


def _attach_se(
    results: List[GroupTimeResult],
    overall: AggregateResult,
    study: AggregateResult,
    se: np.ndarray,
) -> None:
    k = len(results)
    for r, s in zip(sorted(results, key=lambda r: (r.g, r.t)), se[:k]):
        r.se = float(s)
    tail = list(overall.values) + list(study.values)
    for v, s in zip(tail, se[k:]):
        v.se = float(s)


def _drdid_document(data: PanelDataset, config: RunConfig) -> Dict[str, Any]:
    method = Method(config.method)
    results = estimate_att_gt(data, config.covariates, config.options, method)
    overall = aggregate_overall(results, data)
    study = aggregate_event_study(results, data)

    boot_info: Optional[Dict[str, Any]] = None
    if config.reps:
        inner = config.options.model_copy(update={"threads": 1})

        def estimator(d: PanelDataset) -> np.ndarray:
            return aggregate_vector(estimate_att_gt(d, config.covariates, inner, method, verbose=False), d)

        boot = bootstrap_se(estimator, data, config.reps, config.seed, threads=config.options.threads)
        _attach_se(results, overall, study, boot.se)
        boot_info = {"reps": boot.reps, "failures": boot.failures, "seed": config.seed}

    return {
        "method": method.value,
        "att_gt": [r.model_dump(mode="json") for r in results],
        "overall": overall.model_dump(mode="json"),
        "event_study": study.model_dump(mode="json"),
        "bootstrap": boot_info,
    }


def estimation_documents(data: PanelDataset, config: RunConfig) -> Dict[str, str]:
    """Estimate artifacts by file name: the estimates document plus CSV tables."""
    if data.outcome is None:
        raise EstimationError("estimation needs an outcome column in the panel mapping")
    method = Method(config.method)
    body = _twfe_document(data, config) if method == Method.TWFE else _drdid_document(data, config)
    doc = _envelope("estimate", config)
    doc.update(body)

    out: Dict[str, str] = {}
    if _wants(config, "json"):
        out[ESTIMATES_JSON] = dumps(doc)
    if _wants(config, "csv"):
        if method == Method.TWFE:
            out[TWFE_WEIGHTS_CSV] = _frame_csv(pd.DataFrame.from_records(body["weights"]))
        else:
            out[ATT_GT_CSV] = _frame_csv(pd.DataFrame.from_records(body["att_gt"]))
            points = [
                {"event_time": int(v["label"]), "estimate": v["estimate"], "se": v["se"]}
                for v in body["event_study"]["values"]
            ]
            out[EVENT_STUDY_CSV] = _frame_csv(pd.DataFrame.from_records(points))
    return out


# ---------- Stage 3: balance ----------

def balance_documents(profile: WeightProfile, data: PanelDataset, config: RunConfig) -> Dict[str, str]:
    """Balance report (JSON/CSV) and love plot for the given implicit weights."""
    report = balance_report(profile, data, config.functionals or None)
    out: Dict[str, str] = {}
    if _wants(config, "json"):
        doc = _envelope("balance", config)
        doc["balance"] = report.model_dump(mode="json")
        out[BALANCE_JSON] = dumps(doc)
    if _wants(config, "csv"):
        out[BALANCE_CSV] = balance_csv(report)
    out[LOVE_PLOT_SVG] = love_plot_svg(report, title=f"Implicit-weight balance: {profile.estimator}")
    return out
