from typing import Optional

from pydantic import field_validator
from pydantic_settings import BaseSettings

_TRUTHY = {"1", "true", "yes", "on", "debug", "development"}
_FALSY = {"0", "false", "no", "off", "release", "prod", "production"}


class AppSettings(BaseSettings):
    """Process-wide settings, overridable with SPIKETRACK_* environment variables."""

    # Project
    PROJECT_NAME: str = "spiketrack"
    VERSION: str = "0.3.0"
    ENVIRONMENT: str = "development"
    DEBUG: bool = False

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"

    # Encoding model
    BIN_WIDTH_S: float = 0.01
    # saturating clamp on the conditional intensity (Hz)
    LAMBDA_MAX_HZ: float = 1000.0
    # Bins whose smoothed rate falls below this are dropped from the
    # inverse-nonlinearity regression.
    LAMBDA_FLOOR_HZ: float = 1e-6

    # Run overrides; None leaves the config file value in place
    SEED: Optional[int] = None
    WORKERS: Optional[int] = None
    OUTPUT_DIR: Optional[str] = None

    @field_validator("DEBUG", mode="before")
    @classmethod
    def _coerce_debug(cls, value):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            normalized = value.strip().lower()
            if normalized in _TRUTHY:
                return True
            if normalized in _FALSY:
                return False
        return value

    @field_validator("LOG_FORMAT")
    @classmethod
    def _normalize_log_format(cls, value: str) -> str:
        value = (value or "json").strip().lower()
        if value not in {"json", "console"}:
            raise ValueError("LOG_FORMAT must be 'json' or 'console'")
        return value

    class Config:
        env_prefix = "SPIKETRACK_"
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = AppSettings()
