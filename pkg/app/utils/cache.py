import json
import hashlib
from pathlib import Path
from typing import Any, Dict, Optional


_INDEX_FILE = "index.json"
_CHUNK = 1 << 20


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(_CHUNK), b""):
            h.update(block)
    return h.hexdigest()


def _normalize_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    The output location does not change results and is dropped; the input is keyed by path and content.
    """
    return {k: v for k, v in sorted(config.items()) if k != "output_dir"}


def make_run_key(kind: str, config: Dict[str, Any], input_path: Optional[Path] = None) -> str:
    payload = {
        "kind": kind,
        "config": _normalize_config(config),
        "input": file_digest(input_path) if input_path is not None else None,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _index_path(cache_root: Path) -> Path:
    return cache_root / _INDEX_FILE


def load_index(cache_root: Path) -> Dict[str, Any]:
    p = _index_path(cache_root)
    if not p.exists():
        return {}
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}


def save_index(cache_root: Path, idx: Dict[str, Any]) -> None:
    p = _index_path(cache_root)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(idx, ensure_ascii=False, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(p)


def lookup_origin_run(cache_root: Path, key: str) -> Optional[str]:
    """
    Returns run_id if present in index; None otherwise.
    """
    entry = load_index(cache_root).get(key)
    if entry and isinstance(entry, dict):
        return entry.get("run_id")
    return None


def record_origin_run(cache_root: Path, key: str, run_id: str) -> None:
    """
    Writes/updates index: key -> run_id
    """
    idx = load_index(cache_root)
    idx[key] = {"run_id": run_id}
    save_index(cache_root, idx)
