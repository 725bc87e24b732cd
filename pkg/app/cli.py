import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.config.config import Settings, get_settings
from app.domain.errors import ConfigError, DidError, PanelValidationError
from app.domain.options import Comparison, CovariateMode, Method
from app.domain.schemas import RunConfig
from app.services.jobs.manager import RunManager
from app.services.jobs.pipeline import ESTIMATES_JSON
from app.services.oracle.checks import FAIL, checks_frame, run_oracle_checks
from app.services.oracle.dgp import load_dgp, simulate_sample
from app.services.panel.loader import validate_long_csv, write_long_csv
from app.utils.configfile import build_run_config
from app.utils.logging import configure_logging, get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2

_PANEL_FLAGS = ("unit", "time", "outcome", "treat", "group", "weight", "region")


# ---------- Parser ----------

def _add_panel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or YAML run config; flags override it")
    p.add_argument("--input", type=Path, help="long CSV panel")
    p.add_argument("--unit", help="unit id column")
    p.add_argument("--time", help="period column")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--treat", help="0/1 treatment column")
    p.add_argument("--group", help="first-treated-period column (0 = never treated)")
    p.add_argument("--tv", nargs="+", help="time-varying covariate columns")
    p.add_argument("--ti", nargs="+", help="time-invariant covariate columns")
    p.add_argument("--weight", help="sampling weight column")
    p.add_argument("--region", help="region column for region-by-period effects")
    p.add_argument("--drop-always-treated", action="store_true", default=None,
                   help="drop units treated in the first period instead of failing")


def _add_run_flags(p: argparse.ArgumentParser, default_method: Method) -> None:
    _add_panel_flags(p)
    modes = [m.value for m in CovariateMode]
    p.add_argument("--method", choices=[m.value for m in Method], default=None,
                   help=f"estimator (default: {default_method.value})")
    p.add_argument("--covariates", choices=modes, help="covariate functionals for both nuisance models")
    p.add_argument("--outcome-covariates", choices=modes, help="override for the outcome model")
    p.add_argument("--pscore-covariates", choices=modes, help="override for the propensity model")
    p.add_argument("--no-ti", action="store_true", default=None, help="leave time-invariant covariates out")
    p.add_argument("--comparison", choices=[c.value for c in Comparison])
    p.add_argument("--anticipation", type=int)
    p.add_argument("--trim", action="store_true", default=None, help="trim near-one propensities once")
    p.add_argument("--ridge", type=float)
    p.add_argument("--min-group-size", type=int)
    p.add_argument("--no-pre-periods", action="store_true", default=None, help="skip pre-treatment cells")
    p.add_argument("--region-fe", action="store_true", default=None, help="region-by-period fixed effects")
    p.add_argument("--reps", type=int, help="bootstrap replications (0 = none)")
    p.add_argument("--seed", type=int)
    p.add_argument("--functionals", nargs="+", help="balance functionals, e.g. d.x base.x z")
    p.add_argument("--formats", nargs="+", choices=["json", "csv"])
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--no-cache", action="store_true", help="always recompute")
    p.set_defaults(default_method=default_method.value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trendweights",
        description="Difference-in-differences estimators with implicit-weight balance diagnostics.",
    )
    parser.add_argument("--debug", action="store_true", help="verbose logging")
    parser.add_argument("--log-file", help="also log to this rotating file")
    parser.add_argument("--threads", type=int, help="cap on worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a long CSV panel and print the validation report")
    _add_panel_flags(p)

    p = sub.add_parser("estimate", help="estimate effects and write the implicit-weight balance report")
    _add_run_flags(p, Method.AIPW)

    p = sub.add_parser("balance", help="implicit-weight balance report and love plot (no outcome needed)")
    _add_run_flags(p, Method.AIPW)

    p = sub.add_parser("simulate", help="draw a panel from a DGP fixture")
    p.add_argument("--dgp", required=True, help="fixture name or path to a DGP JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True, help="CSV to write")

    p = sub.add_parser("oracle-check", help="closure checks on every DGP fixture")
    p.add_argument("--fixtures", type=Path, help="directory of DGP fixtures")
    return parser


# ---------- Config ----------

def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {"input": str(args.input) if args.input else None}
    panel = {k: getattr(args, k) for k in _PANEL_FLAGS}
    panel.update(tv=args.tv, ti=args.ti)
    if any(v is not None for v in panel.values()):
        out["panel"] = panel
    out["drop_always_treated"] = args.drop_always_treated
    if not hasattr(args, "method"):
        return out

    cov: Dict[str, Any] = {"mode": args.covariates}
    if args.no_ti:
        cov["include_ti"] = False
    if args.outcome_covariates:
        cov["outcome"] = {"mode": args.outcome_covariates}
    if args.pscore_covariates:
        cov["propensity"] = {"mode": args.pscore_covariates}
    out["covariates"] = cov
    out["options"] = {
        "comparison": args.comparison,
        "anticipation": args.anticipation,
        "trim": args.trim,
        "ridge": args.ridge,
        "min_group_size": args.min_group_size,
        "pre_periods": False if args.no_pre_periods else None,
        "region_fe": args.region_fe,
        "threads": args.threads,
    }
    out.update(
        method=args.method,
        reps=args.reps,
        seed=args.seed,
        functionals=args.functionals,
        formats=args.formats,
        output_dir=str(args.output_dir) if args.output_dir else None,
    )
    return out


def resolve_config(args: argparse.Namespace, settings: Settings) -> RunConfig:
    defaults: Dict[str, Any] = {
        "reps": settings.bootstrap_reps,
        "seed": settings.seed,
        "options": {"threads": settings.threads},
    }
    if hasattr(args, "default_method"):
        defaults["method"] = args.default_method
    return build_run_config(args.config, _overrides(args), defaults)


# ---------- Commands ----------

def _cmd_validate(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args, settings)
    if config.input is None or config.panel is None:
        raise ConfigError("validate needs --input and a column mapping (--config or --unit/--time/...)")
    report = validate_long_csv(config.input, config.panel, drop_always_treated=config.drop_always_treated)
    print(json.dumps(report.model_dump(mode="json"), indent=2))
    for issue in report.errors:
        where = f" ({issue.location})" if issue.location else ""
        print(f"error [{issue.code}]: {issue.message}{where}", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_INVALID


def _print_estimates(path: Path) -> None:
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("method") == Method.TWFE.value:
        sums = doc["sums"]
        print(f"twfe alpha = {doc['alpha']:.6g}")
        if sums.get("pretrend_zeroed_alpha") is not None:
            print(f"pre-treatment contribution = {sums['pre_contribution']:.6g}, "
                  f"pretrend-zeroed alpha = {sums['pretrend_zeroed_alpha']:.6g}")
        return
    for v in doc["overall"]["values"]:
        se = f" (se {v['se']:.4g})" if v.get("se") is not None else ""
        print(f"{doc['method']} ATT^o = {v['estimate']:.6g}{se}")
    for v in doc["event_study"]["values"]:
        print(f"  e={v['label']:>3}: {v['estimate']:.6g}")


def _cmd_run(kind: str, args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args, settings)
    root = Path(config.output_dir).resolve() if config.output_dir else settings.output_dir
    manager = RunManager(
        runs_dir=root / settings.runs_dirname,
        cache_dir=root / settings.cache_dirname,
        use_cache=settings.use_cache and not args.no_cache,
    )
    run_id = manager.create_run(kind, config)
    names = manager.run(run_id)
    print(f"run {run_id} READY")
    for name in names:
        print(f"  {manager.artifact_path(run_id, name)}")
    if ESTIMATES_JSON in names:
        _print_estimates(manager.artifact_path(run_id, ESTIMATES_JSON))
    return EXIT_OK


def _dgp_path(name: str, settings: Settings) -> Path:
    p = Path(name)
    if p.exists():
        return p
    return settings.fixtures_dir / (name if name.endswith(".json") else f"{name}.json")


def _cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    dgp = load_dgp(_dgp_path(args.dgp, settings))
    seed = settings.seed if args.seed is None else args.seed
    data = simulate_sample(dgp, args.n, seed)
    write_long_csv(data, args.out)
    print(f"wrote {data.n} units x {data.T} periods from {dgp.name} to {args.out}")
    return EXIT_OK


def _cmd_oracle(args: argparse.Namespace, settings: Settings) -> int:
    rows = run_oracle_checks(args.fixtures or settings.fixtures_dir)
    frame = checks_frame(rows)
    print(frame[["fixture", "check", "status", "value", "tolerance"]].to_string(index=False))
    failed = [r for r in rows if r.status == FAIL]
    for r in failed:
        print(f"FAIL {r.fixture}/{r.check}: {r.detail}", file=sys.stderr)
    return EXIT_FAILED if failed else EXIT_OK


def exit_code(error: BaseException) -> int:
    """1 for invalid input (panel, config, missing files), 2 for every other failure."""
    if isinstance(error, (PanelValidationError, ConfigError, FileNotFoundError)):
        return EXIT_INVALID
    return EXIT_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(args.debug or settings.debug, args.log_file or settings.log_file)

    commands = {
        "validate": lambda: _cmd_validate(args, settings),
        "estimate": lambda: _cmd_run("estimate", args, settings),
        "balance": lambda: _cmd_run("balance", args, settings),
        "simulate": lambda: _cmd_simulate(args, settings),
        "oracle-check": lambda: _cmd_oracle(args, settings),
    }
    try:
        return commands[args.command]()
    except (DidError, FileNotFoundError, ValueError) as e:
        code = getattr(e, "code", type(e).__name__)
        print(f"{args.command} failed [{code}]: {e}", file=sys.stderr)
        return exit_code(e)
