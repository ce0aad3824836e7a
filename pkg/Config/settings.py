"""
Process-level settings for the rate_in project.

Values come from the environment (optionally a ``.env`` file next to
``manage.py``). Per-run options live in the YAML run config instead, see
``rate_in.config``.

    RATEIN_LOG       log level (DEBUG, INFO, WARNING, ...)
    RATEIN_WORKERS   default worker count for batch / sweep fan-out
    RATEIN_PROGRESS  show tqdm progress bars (0/1)
    RATEIN_SEED      default seed when a config does not name one
"""

from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")

# Seed used by every synthetic run unless overridden.
DEFAULT_SEED = 123


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="RATEIN_", extra="ignore")

    log: str = "INFO"
    workers: int = 1
    progress: bool = False
    seed: int = DEFAULT_SEED


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings()
