import json
import os
import shutil
import time
import uuid
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.domain.schemas import RunConfig, RunStatus
from app.domain.states import RunState, can_transition, is_terminal
from app.services.jobs.pipeline import balance_documents, estimation_documents, implicit_profile, load_panel
from app.utils.cache import lookup_origin_run, make_run_key, record_origin_run
from app.utils.logging import get_logger

logger = get_logger(__name__)

RUN_KINDS = ("estimate", "balance")


@dataclass
class ManagerConfig:
    runs_dir: Path
    cache_dir: Path
    use_cache: bool


class RunManager:
    """
    Filesystem-backed run orchestrator. Creates a run directory, writes the config echo, transitions
    states, loads and validates the panel, computes estimates and implicit weights, then writes the
    balance diagnostics. A READY run with the same fingerprint is reused instead of recomputed.
    """

    def __init__(self, runs_dir: Path, cache_dir: Path, use_cache: bool = True):
        self.cfg = ManagerConfig(runs_dir=Path(runs_dir), cache_dir=Path(cache_dir), use_cache=use_cache)
        self.cfg.runs_dir.mkdir(parents=True, exist_ok=True)
        self.cfg.cache_dir.mkdir(parents=True, exist_ok=True)

    def create_run(self, kind: str, config: RunConfig) -> str:
        if kind not in RUN_KINDS:
            raise ValueError(f"unknown run kind: {kind}")
        run_id = uuid.uuid4().hex
        rd = self._run_dir(run_id)
        rd.mkdir(parents=True, exist_ok=True)

        self._write_json(rd / "request.json", {"kind": kind, "config": config.model_dump(mode="json")})

        now = time.time()
        self._write_json(rd / "status.json", {
            "id": run_id,
            "kind": kind,
            "state": RunState.PENDING.value,
            "error": None,
            "origin": None,
            "createdAt": now,
            "updatedAt": now,
        })
        return run_id

    def run(self, run_id: str) -> List[str]:
        """
        Execute a created run and return the artifact names. On failure the run is marked FAILED
        with the error message and the exception is re-raised.
        """
        try:
            request = self._read_json(self._run_dir(run_id) / "request.json")
            if not request:
                raise RuntimeError(f"run {run_id} has no request")
            kind: str = request["kind"]
            config = RunConfig.model_validate(request["config"])

            cache_key = None
            if self.cfg.use_cache and config.input is not None and Path(config.input).exists():
                cache_key = make_run_key(kind, request["config"], Path(config.input))
                origin = lookup_origin_run(self.cfg.cache_dir, cache_key)
                if origin and origin != run_id and self._is_ready_run(origin):
                    logger.info(f"Cache hit for run {run_id}, using origin run {origin}")
                    return self._reuse(run_id, origin)
                logger.info(f"Cache miss for run {run_id}")

            # 1) Panel
            self._transition(run_id, RunState.VALIDATING)
            data = load_panel(config)

            # 2) Estimates and implicit weights
            self._transition(run_id, RunState.ESTIMATING)
            artifacts: Dict[str, str] = {}
            if kind == "estimate":
                artifacts.update(estimation_documents(data, config))
            profile = implicit_profile(data, config)

            # 3) Balance
            self._transition(run_id, RunState.DIAGNOSING)
            artifacts.update(balance_documents(profile, data, config))

            rd = self._run_dir(run_id)
            for name, text in sorted(artifacts.items()):
                (rd / name).write_text(text, encoding="utf-8")
            if logger.isEnabledFor(logging.DEBUG):
                logger.debug(f"Run {run_id} wrote {sorted(artifacts)}")

            self._transition(run_id, RunState.READY)
            logger.info(f"Run {run_id} is READY")

            if cache_key:
                record_origin_run(self.cfg.cache_dir, cache_key, run_id)  # only after READY succeeds
            return sorted(artifacts)

        except Exception as e:
            logger.error(f"Run {run_id} failed: {e}", exc_info=True)
            self._fail(run_id, str(e))
            raise

    def _reuse(self, run_id: str, origin: str) -> List[str]:
        names = self.list_artifacts(origin)
        if not names:
            msg = f"Cache inconsistency: READY run {origin} has no artifacts"
            logger.error(msg)
            raise RuntimeError(msg)
        for name in names:
            self._link_or_copy(self._run_dir(origin) / name, self._run_dir(run_id) / name)
        for state in (RunState.VALIDATING, RunState.ESTIMATING, RunState.DIAGNOSING, RunState.READY):
            self._transition(run_id, state)
        self._update_status(run_id, origin=origin)
        return names

    def _is_ready_run(self, run_id: str) -> bool:
        st = self._read_json(self._run_dir(run_id) / "status.json")
        return bool(st) and st.get("state") == RunState.READY.value

    @staticmethod
    def _link_or_copy(src: Path, dst: Path) -> None:
        dst.parent.mkdir(parents=True, exist_ok=True)
        if dst.exists():
            return
        try:
            os.link(src, dst)  # hard link (no extra space)
        except OSError:
            try:
                os.symlink(src, dst)
            except OSError:
                shutil.copy2(src, dst)

    def get_status(self, run_id: str) -> Optional[RunStatus]:
        st = self._read_json(self._run_dir(run_id) / "status.json")
        if not st:
            return None
        return RunStatus(**st)

    def list_artifacts(self, run_id: str) -> List[str]:
        rd = self._run_dir(run_id)
        skip = {"request.json", "status.json"}
        return sorted(p.name for p in rd.iterdir() if p.is_file() and p.name not in skip) if rd.exists() else []

    def artifact_path(self, run_id: str, name: str) -> Path:
        return self._run_dir(run_id) / name

    # --- Utils ---

    def _run_dir(self, run_id: str) -> Path:
        return self.cfg.runs_dir / run_id

    def _fail(self, run_id: str, error: str) -> None:
        st = self._read_json(self._run_dir(run_id) / "status.json")
        if not st or is_terminal(RunState(st["state"])):
            return
        self._transition(run_id, RunState.FAILED, error=error)

    def _update_status(self, run_id: str, **fields: Any) -> None:
        st_path = self._run_dir(run_id) / "status.json"
        st = self._read_json(st_path) or {}
        st.update(fields)
        st["updatedAt"] = time.time()
        self._write_json(st_path, st)

    def _transition(self, run_id: str, dst_state: RunState, error: Optional[str] = None) -> None:
        st_path = self._run_dir(run_id) / "status.json"
        st = self._read_json(st_path)
        if not st:
            raise RuntimeError("run status missing")

        src_state = RunState(st["state"])
        if not can_transition(src_state, dst_state):
            # Still update error + updatedAt, but keep remaining state
            if error:
                st["error"] = error
                st["updatedAt"] = time.time()
                self._write_json(st_path, st)
            raise RuntimeError(f"Invalid state transition: {src_state.value} -> {dst_state.value}")

        st["state"] = dst_state.value
        if error:
            st["error"] = error
        st["updatedAt"] = time.time()
        self._write_json(st_path, st)

    @staticmethod
    def _write_json(path: Path, data: Dict[str, Any]) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)

    @staticmethod
    def _read_json(path: Path) -> Optional[Dict[str, Any]]:
        if not path.exists():
            return None
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
