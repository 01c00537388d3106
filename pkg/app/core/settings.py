import os
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Internal parallelism (0 = one worker per CPU)
    THREADS: int = 0

    # Logging settings
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Default location for --debug-dir dumps when the flag is given without a path
    DEBUG_DIR: Optional[Path] = None

    model_config = SettingsConfigDict(env_file=".env", env_prefix="PALLETPROJ_", extra="ignore")

    def worker_count(self) -> int:
        """Resolve THREADS to a concrete worker count."""
        if self.THREADS > 0:
            return self.THREADS
        return os.cpu_count() or 1


settings = Settings()
