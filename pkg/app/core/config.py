# app/core/config.py
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings; model and data settings live in RunConfig"""

    # Application settings
    APP_ENV: str = "development"
    LOG_LEVEL: str = "INFO"
    LOG_PATH: str = "logs/vessel_audio.log"
    LOG_ROTATION: str = "50 MB"
    LOG_RETENTION: str = "10 days"
    LOG_JSON: bool = False

    # Runtime settings
    SHOW_PROGRESS: bool = True
    RUN_CONFIG: Optional[str] = None  # TOML used when --config is not given

    model_config = SettingsConfigDict(env_file=".env", extra="ignore")


@lru_cache()
def get_settings():
    return Settings()


# Export settings instance
settings = get_settings()
