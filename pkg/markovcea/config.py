"""
Runtime settings read from the environment (and an optional .env file)
"""

import logging
import os
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

ENV_PREFIX = "MARKOVCEA_"


class Settings(BaseModel):
    """Process-wide defaults; command-line flags take precedence"""

    log_level: str = Field(default="INFO", description="Root logging level")
    threads: int = Field(default=1, description="Worker processes for DSA, PSA and heterogeneity runs")
    out_dir: Path = Field(default=Path("."), description="Directory receiving CSV reports")
    data_root: Path = Field(default=Path("."), description="Directory the HTTP API may read model data from")
    api_host: str = Field(default="0.0.0.0", description="Bind address of the HTTP API")
    api_port: int = Field(default=8000, description="Port of the HTTP API")

    @field_validator("threads")
    @classmethod
    def _positive_threads(cls, value: int) -> int:
        if value < 1:
            raise ValueError("threads must be >= 1")
        return value

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in logging.getLevelNamesMapping():
            raise ValueError(f"unknown log level '{value}'")
        return level


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load settings once per process"""
    load_dotenv()
    values = {}
    for field in Settings.model_fields:
        raw = os.getenv(ENV_PREFIX + field.upper())
        if raw is not None and raw != "":
            values[field] = raw
    return Settings(**values)


def configure_logging(level: str) -> None:
    """Install the root handler used by the command-line tools"""
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
