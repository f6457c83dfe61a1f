import os
import logging

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process-wide defaults sourced from environment variables.

    Backed by pydantic-settings for type coercion and validation at startup.
    Kept dict-accessible (``CONFIG['KEY']``) so callers and tests can read and
    patch values the same way regardless of where they come from.
    """

    model_config = SettingsConfigDict(
        case_sensitive=False,
        extra="ignore",
        validate_assignment=True,
    )

    # --- Environment-driven settings ---
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "output"
    HISTORY_DB_PATH: str = os.path.join("data", "run_history.db")
    RESET_DB: bool = False

    # Solver defaults; every run echoes the effective values in summary.json.
    DEFAULT_N_STEPS: int = 2000
    MAX_ITERATIONS: int = 20000
    TOLERANCE: float = 1e-6
    RELAXATION: float = 0.5
    # Past sweeps mixed into each accelerated update; 0 keeps plain relaxation.
    ANDERSON_DEPTH: int = 6

    # Sweep rows run in a process pool of this size; 0 means one per hardware thread.
    WORKERS: int = 0
    ORACLE_MAX_CANDIDATES: int = 10_000_000

    # --- Derived / runtime fields (populated in load_config) ---
    FIXTURES_DIR: str = ""

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def _normalize_log_level(cls, value):
        return str(value).upper()

    @field_validator("DEFAULT_N_STEPS", "MAX_ITERATIONS", "ORACLE_MAX_CANDIDATES")
    @classmethod
    def _positive_int(cls, value):
        if value < 1:
            raise ValueError("must be a positive integer")
        return value

    @field_validator("TOLERANCE")
    @classmethod
    def _positive_tolerance(cls, value):
        if value <= 0:
            raise ValueError("tolerance must be > 0")
        return value

    @field_validator("RELAXATION")
    @classmethod
    def _relaxation_range(cls, value):
        if not 0 < value <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        return value

    @field_validator("ANDERSON_DEPTH")
    @classmethod
    def _non_negative_depth(cls, value):
        if value < 0:
            raise ValueError("ANDERSON_DEPTH must be >= 0")
        return value

    @field_validator("WORKERS")
    @classmethod
    def _non_negative_workers(cls, value):
        if value < 0:
            raise ValueError("WORKERS must be >= 0")
        return value

    # --- dict-style compatibility shims ---
    def __getitem__(self, key):
        return getattr(self, key)

    def __setitem__(self, key, value):
        setattr(self, key, value)

    def __contains__(self, key):
        return key in type(self).model_fields

    def get(self, key, default=None):
        return getattr(self, key, default)

    def worker_count(self):
        """Resolve WORKERS=0 to the number of hardware threads."""
        return self.WORKERS or (os.cpu_count() or 1)


def load_config():
    """Build a Settings instance and resolve the paths that depend on the repo layout."""
    settings = Settings()

    repo_dir = os.path.dirname(os.path.abspath(__file__))
    settings.FIXTURES_DIR = os.getenv("FIXTURES_DIR", os.path.join(repo_dir, "data", "fixtures"))

    if not os.path.isdir(settings.FIXTURES_DIR):
        logger.warning(f"Fixtures directory not found at {settings.FIXTURES_DIR}")

    return settings


CONFIG = load_config()
