#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Core Configuration
Process-level settings read from the environment (VGCE_*) and an optional .env file
"""

from typing import Literal

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Runtime settings that are not part of an experiment's RunConfig"""

    model_config = SettingsConfigDict(env_prefix="VGCE_", env_file=".env", extra="ignore")

    # Logging
    LOG: Literal["error", "info", "debug"] = "info"
    LOG_FORMAT: Literal["json", "console"] = "json"

    # Execution
    THREADS: int = 1
    PROGRESS: bool = False

    @field_validator("LOG", mode="before")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        return v.lower() if isinstance(v, str) else v

    @field_validator("THREADS")
    @classmethod
    def positive_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("THREADS must be >= 1")
        return v


def get_settings() -> Settings:
    """Read settings fresh from the environment."""
    return Settings()


# Global settings instance
settings = get_settings()
