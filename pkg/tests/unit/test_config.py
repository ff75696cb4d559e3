"""Unit tests for environment-driven settings."""

import os
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from src.config import Settings
from src.engine import DEFAULT_MAX_EVENTS_PER_INSTANT


def load(**env):
    """Settings from exactly ``env``, ignoring the process environment and any .env file."""
    with patch.dict(os.environ, env, clear=True):
        return Settings(_env_file=None)


def test_defaults():
    settings = load()
    assert settings.log_level == "INFO"
    assert settings.output_dir == "."
    assert settings.capture_spill_threshold == 1_000_000
    assert settings.capture_spill_dir is None
    assert settings.max_events_per_instant == DEFAULT_MAX_EVENTS_PER_INSTANT
    assert settings.default_seed == 1


def test_environment_overrides():
    settings = load(
        NIDSIM_LOG_LEVEL="debug",
        NIDSIM_OUTPUT_DIR="/data/out",
        NIDSIM_CAPTURE_SPILL_THRESHOLD="5000",
        NIDSIM_CAPTURE_SPILL_DIR="/scratch",
        NIDSIM_DEFAULT_SEED="42",
    )
    assert settings.log_level == "DEBUG"
    assert settings.output_dir == "/data/out"
    assert settings.capture_spill_threshold == 5000
    assert settings.capture_spill_dir == "/scratch"
    assert settings.default_seed == 42


def test_env_file_is_read(tmp_path):
    env_file = tmp_path / ".env"
    env_file.write_text("NIDSIM_DEFAULT_SEED=77\nNIDSIM_LOG_LEVEL=warning\n")
    with patch.dict(os.environ, {}, clear=True):
        settings = Settings(_env_file=str(env_file))
    assert settings.default_seed == 77
    assert settings.log_level == "WARNING"


@pytest.mark.parametrize(
    ("name", "value", "message"),
    [
        ("NIDSIM_LOG_LEVEL", "LOUD", "NIDSIM_LOG_LEVEL"),
        ("NIDSIM_CAPTURE_SPILL_THRESHOLD", "0", "NIDSIM_CAPTURE_SPILL_THRESHOLD"),
        ("NIDSIM_MAX_EVENTS_PER_INSTANT", "-1", "NIDSIM_MAX_EVENTS_PER_INSTANT"),
        ("NIDSIM_DEFAULT_SEED", str(2**64), "NIDSIM_DEFAULT_SEED"),
    ],
)
def test_invalid_values_are_rejected(name, value, message):
    with pytest.raises(ValidationError, match=message):
        load(**{name: value})
