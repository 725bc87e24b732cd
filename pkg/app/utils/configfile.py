import json
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from pydantic import ValidationError

from app.domain.errors import ConfigError
from app.domain.schemas import RunConfig

SUPPORTED_SUFFIXES = (".json", ".yml", ".yaml")


def read_config_mapping(path: Path) -> Dict[str, Any]:
    """Raw mapping from a JSON or YAML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise ConfigError(f"unsupported config format: {path.suffix} (use .json, .yml or .yaml)")

    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {path.name}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"invalid config {path.name}: expected a mapping at the top level")
    return data


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            prior = out.get(key)
            out[key] = _merge(prior if isinstance(prior, dict) else {}, value)
        else:
            out[key] = value
    return out


def build_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    defaults: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    `defaults` first, then file values, then `overrides` (nested mappings merge key by key; None values
    are ignored).
    Unknown keys and invalid values raise ConfigError.
    """
    data = read_config_mapping(path) if path is not None else {}
    if path is not None and isinstance(data.get("input"), str) and not Path(data["input"]).is_absolute():
        data["input"] = str(Path(path).parent / data["input"])  # relative to the config file
    merged = _merge(_merge(defaults or {}, data), overrides or {})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid run config: {problems}") from e
