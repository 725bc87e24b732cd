import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import BaseModel
from dotenv import load_dotenv


load_dotenv(override=False)

_SHIPPED_FIXTURES = Path(__file__).resolve().parent / "fixtures"


class Settings(BaseModel):
    # --- Logging ---
    debug: bool = os.getenv("DIDW_DEBUG", "false").lower() == "true"
    log_file: Optional[str] = os.getenv("DIDW_LOG_FILE") or None

    # --- Storage ---
    output_dir: Path = Path(os.getenv("DIDW_OUTPUT_DIR", "./output")).resolve()
    runs_dirname: str = os.getenv("DIDW_RUNS_DIRNAME", "runs")
    cache_dirname: str = os.getenv("DIDW_CACHE_DIRNAME", "cache")
    use_cache: bool = os.getenv("DIDW_USE_CACHE", "true").lower() == "true"

    # --- Oracle ---
    fixtures_dir: Path = Path(os.getenv("DIDW_FIXTURES_DIR") or _SHIPPED_FIXTURES).resolve()

    # --- Estimation defaults ---
    threads: int = int(os.getenv("DIDW_THREADS", "1"))
    bootstrap_reps: int = int(os.getenv("DIDW_BOOTSTRAP_REPS", "0"))
    seed: int = int(os.getenv("DIDW_SEED", "12345"))


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Global accessor for process settings."""
    return Settings()
