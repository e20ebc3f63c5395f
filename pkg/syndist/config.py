"""Process-wide settings read from the environment (and an optional .env file)."""

import os
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseSettings, Field, validator

load_dotenv()


class Settings(BaseSettings):
    """Runtime settings; every field maps to a ``SYNDIST_*`` variable."""

    threads: int = Field(default_factory=lambda: os.cpu_count() or 1)
    out_dir: Path = Path("runs")
    log_level: str = "INFO"

    class Config:
        env_prefix = "SYNDIST_"
        env_file = ".env"

    @validator("threads")
    def _at_least_one(cls, v: int) -> int:
        return max(1, v)

    @validator("log_level")
    def _upper(cls, v: str) -> str:
        return v.upper()


@lru_cache()
def get_settings() -> Settings:
    return Settings()


LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
