from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from app.domain.errors import DidError
from app.services.oracle.dgp import PopulationTable, enumerate_population, fixture_paths, load_dgp
from app.services.oracle.truth import (
    MB_TOL,
    TWO_PERIOD_TOL,
    MULTI_PERIOD_TOL,
    mb_grid,
    population_alpha,
    two_period_decomposition,
    multi_period_decomposition,
)
from app.services.twfe.weights import REMAINDER_WARN_SHARE, mp_implicit_weights
from app.utils.logging import get_logger

logger = get_logger(__name__)

PASS = "pass"
FAIL = "fail"
WARN = "warn"


@dataclass
class OracleCheck:
    fixture: str
    check: str
    status: str
    value: float
    tolerance: float
    detail: str = ""


def _mass_check(name: str, table: PopulationTable) -> OracleCheck:
    err = abs(float(table.mass.sum()) - 1.0)
    return OracleCheck(name, "mass_sums_to_one", PASS if err <= 1e-12 else FAIL, err, 1e-12)


def _two_period_checks(name: str, table: PopulationTable) -> List[OracleCheck]:
    terms = two_period_decomposition(table)
    tol = TWO_PERIOD_TOL * max(1.0, abs(terms.alpha))
    mt = table.mass[terms.treated_rows]
    werr = abs(float(np.sum(mt * terms.weights) / mt.sum()) - 1.0)
    detail = (
        f"alpha={terms.alpha:.6g} catt={terms.weighted_catt:.6g} A={terms.term_a:.4g} "
        f"B={terms.term_b:.4g} C={terms.term_c:.4g}"
    )
    return [
        OracleCheck(name, "two_period_closure", PASS, abs(terms.closure_error), tol, detail),
        OracleCheck(name, "two_period_weights_mean_one", PASS if werr <= 1e-10 else FAIL, werr, 1e-10),
    ]


def _multi_period_checks(name: str, table: PopulationTable) -> List[OracleCheck]:
    out: List[OracleCheck] = []
    grid = mb_grid(table)
    worst = max(float(np.max(np.abs(m.mb.sum(axis=0) - m.xi))) for m in grid)
    out.append(OracleCheck(name, "mb_terms_sum_to_xi", PASS, worst, MB_TOL, f"{len(grid)} cells"))

    terms = multi_period_decomposition(table)
    detail = (
        f"alpha={terms.alpha:.6g} catt={terms.weighted_catt:.6g} post_xi={terms.post_xi:.4g} "
        f"pre_xi={terms.pre_xi:.4g} never_xi={terms.never_xi:.4g} ptv={terms.pt_violation:.4g}"
    )
    out.append(OracleCheck(name, "multi_period_closure", PASS, abs(terms.closure_error), MULTI_PERIOD_TOL, detail))

    report = mp_implicit_weights(table.as_panel())
    sum_err = max(abs(report.post_sum - 1.0), abs(report.pre_sum + 1.0))
    out.append(OracleCheck(name, "weight_sums", PASS if sum_err <= 1e-8 else FAIL, sum_err, 1e-8))
    alpha = report.alpha
    limit = REMAINDER_WARN_SHARE * abs(alpha)
    ok = alpha == 0 or abs(report.remainder) <= limit
    out.append(
        OracleCheck(
            name, "remainder_small", PASS if ok else WARN, abs(report.remainder), limit,
            f"pre={report.pre_contribution:.4g} pretrend-zeroed alpha={report.pretrend_zeroed_alpha:.6g}",
        )
    )
    return out


def check_fixture(path: Path) -> List[OracleCheck]:
    """Run every closure check on one DGP file; failures become FAIL rows instead of exceptions."""
    name = Path(path).stem
    rows: List[OracleCheck] = []
    try:
        dgp = load_dgp(path)
        table = enumerate_population(dgp)
        rows.append(_mass_check(name, table))
        rows.append(OracleCheck(name, "population_alpha", PASS, population_alpha(table), 0.0))
        if table.T == 2:
            rows += _two_period_checks(name, table)
        rows += _multi_period_checks(name, table)
    except DidError as e:
        logger.error(f"Oracle check failed for {name}: {e}")
        rows.append(OracleCheck(name, getattr(e, "code", "error"), FAIL, float("nan"), 0.0, str(e)))
    return rows


def run_oracle_checks(fixtures_dir: Path) -> List[OracleCheck]:
    paths = fixture_paths(fixtures_dir)
    if not paths:
        raise FileNotFoundError(f"no DGP fixtures in {fixtures_dir}")
    rows: List[OracleCheck] = []
    for p in paths:
        rows += check_fixture(p)
    n_fail = sum(r.status == FAIL for r in rows)
    logger.info(f"Oracle checks: {len(paths)} fixtures, {len(rows)} checks, {n_fail} failed")
    return rows


def checks_frame(rows: List[OracleCheck]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=list(OracleCheck.__dataclass_fields__))
