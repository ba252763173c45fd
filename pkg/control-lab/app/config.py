"""Process-level settings for the control lab, read from LAB_* environment variables."""

from functools import lru_cache
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class LabSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="LAB_", extra="ignore")

    log_level: str = Field("INFO", description="Root log level")
    parallel: int = Field(1, ge=1, description="Default worker processes for trials")
    output_dir: Optional[str] = Field(None, description="Overrides the config's output directory")
    metrics_file: Optional[str] = Field(None, description="Prometheus textfile written on exit")


@lru_cache()
def get_settings() -> LabSettings:
    return LabSettings()
