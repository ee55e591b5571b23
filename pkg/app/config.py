from pydantic_settings import BaseSettings
from typing import Tuple

from app.utils.validators import parse_address


class Settings(BaseSettings):
    # Wire endpoints
    FLEETD_ADDR: str = "127.0.0.1:7420"  # used by robotctl and workers
    FLEETD_LISTEN: str = "127.0.0.1:7420"

    # Storage
    RULES_DIR: str = "fleet_rules"
    SNAPSHOT_PATH: str = "fleetd_snapshot.json"

    # Planning backend: "recipe" (deterministic, offline) or "llm"
    PLANNER_BACKEND: str = "recipe"

    # LLM endpoint (chat-completions style)
    LLM_ENDPOINT: str = "https://openrouter.ai/api/v1/chat/completions"
    LLM_API_KEY: str = ""
    LLM_MODEL: str = "openai/gpt-4o"
    LLM_TIMEOUT: float = 60.0
    LLM_MAX_REPAIR_RETRIES: int = 2

    # Execution
    TASK_RETRY_LIMIT: int = 3
    MAX_FRUITLESS_REPLANS: int = 3
    PROBE_TIMEOUT: float = 2.0
    WORKER_BACKOFF_CAP: float = 30.0

    # Wire protocol limits
    LINE_DEADLINE: float = 120.0  # seconds allowed to process one line (plan create may call an LLM)
    MAX_LINE_BYTES: int = 1024 * 1024

    # Logging
    LOG_LEVEL: str = "INFO"  # DEBUG, INFO, WARNING, ERROR, CRITICAL

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"

    @property
    def listen_address(self) -> Tuple[str, int]:
        """Host and port fleetd binds to"""
        return parse_address(self.FLEETD_LISTEN)

    @property
    def manager_address(self) -> Tuple[str, int]:
        """Host and port clients dial"""
        return parse_address(self.FLEETD_ADDR)

    @property
    def log_format(self) -> str:
        return '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# Global settings instance
settings = Settings()
