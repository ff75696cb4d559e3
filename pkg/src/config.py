"""Configuration management using pydantic-settings."""

import logging

from pydantic import model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.engine import DEFAULT_MAX_EVENTS_PER_INSTANT


class Settings(BaseSettings):
    """Process settings loaded from NIDSIM_* environment variables or a .env file."""

    log_level: str = "INFO"

    # Directory for output files when a path is not given explicitly.
    output_dir: str = "."

    # Capture records kept in memory before spilling to SQLite.
    capture_spill_threshold: int = 1_000_000
    capture_spill_dir: str | None = None  # None = system temp dir.

    max_events_per_instant: int = DEFAULT_MAX_EVENTS_PER_INSTANT

    default_seed: int = 1

    model_config = SettingsConfigDict(
        env_prefix="NIDSIM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @model_validator(mode="after")
    def validate_settings(self):
        """Reject unknown log levels and non-positive limits."""
        level = self.log_level.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(
                f"NIDSIM_LOG_LEVEL must be one of DEBUG, INFO, WARNING, ERROR, CRITICAL; got {self.log_level!r}"
            )
        self.log_level = level
        if self.capture_spill_threshold <= 0:
            raise ValueError("NIDSIM_CAPTURE_SPILL_THRESHOLD must be positive")
        if self.max_events_per_instant <= 0:
            raise ValueError("NIDSIM_MAX_EVENTS_PER_INSTANT must be positive")
        if not 0 <= self.default_seed < 2**64:
            raise ValueError("NIDSIM_DEFAULT_SEED must be an unsigned 64-bit integer")
        return self


# Global settings instance.
settings = Settings()
