from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    LOG_DIR: str = Field("logs", description="Directory for log files")
    LOG_LEVEL: str = Field("INFO", description="Root log level")
    LOG_TO_FILE: bool = Field(
        True, description="Write greenfed.log and audit.log besides the console"
    )

    ENABLE_MSGPACK: bool = Field(
        True, description="Also write training ledgers as MessagePack"
    )

    SOLVER_TOLERANCE: float = Field(
        1e-6, gt=0, description="Default bisection tolerance lambda"
    )
    ORACLE_RESOLUTION: float = Field(
        1e-5, gt=0, description="Theta step of the brute-force oracle"
    )

    WORKERS: int = Field(
        1, ge=1, description="Threads used for device updates within a round"
    )

    model_config = SettingsConfigDict(
        env_file=".env", env_prefix="GREENFED_", extra="ignore"
    )


settings = Settings()
