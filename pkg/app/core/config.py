from pydantic_settings import BaseSettings, SettingsConfigDict
import logging


class Settings(BaseSettings):
    # Process-level knobs; experiment parameters live in the YAML config
    # Pydantic-settings reads FSAIL_* environment variables and .env

    # Sweep dispatch - number of worker processes for independent runs
    FSAIL_WORKERS: int = 1

    # Logging
    FSAIL_LOG_LEVEL: str = "INFO"

    # Environment
    FSAIL_ENVIRONMENT: str = "development"

    # Default experiment config used when --config is omitted
    FSAIL_DEFAULT_CONFIG: str = "configs/default.yaml"

    PROJECT_NAME: str = "FSAIL TOPIC Desk"

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()

# Debug echo (development only)
if settings.FSAIL_ENVIRONMENT != "production":
    logging.getLogger(__name__).debug(
        "Settings loaded - workers=%s log_level=%s", settings.FSAIL_WORKERS, settings.FSAIL_LOG_LEVEL
    )
