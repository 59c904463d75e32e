"""Runtime settings for the federated prompt-tuning lab."""
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings loaded from FEDPROMPT_* environment variables.

    Experiment parameters live in the flat config file (see core.config);
    these only tune how a process runs.
    """

    LOG_LEVEL: str = "INFO"
    WORKERS: int = 4
    HOST: str = "127.0.0.1"
    PORT: int = 8765
    ROUND_TIMEOUT: float = 60.0
    HANDSHAKE_TIMEOUT: float = 30.0

    model_config = SettingsConfigDict(
        env_prefix="FEDPROMPT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("WORKERS")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        """At least one worker thread runs client rounds."""
        if v < 1:
            raise ValueError("WORKERS must be at least 1")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        v = v.upper()
        if v not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return v
