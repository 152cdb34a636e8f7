import json
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ValidationError
from pydantic_settings import BaseSettings

from app.models.gateway import ProviderConfig, RouteConfig
from app.models.optimizer import OptimizerConfig
from app.services.errors import ConfigError


class Settings(BaseSettings):
    # Persistence root: registry documents live at <home>/<kind>.json
    home: str = ".agp"
    # Runtime config (providers, routes, optimizer defaults), relative to home unless absolute
    config_file: str = "agp.json"
    log_level: str = "INFO"
    # Control-plane server
    host: str = "127.0.0.1"
    port: int = 8765
    rpc_timeout_seconds: float = 30.0
    # Agent bus: how long the orchestrator waits for a round's results
    bus_round_timeout_seconds: float = 30.0
    # Model gateway: base delay between retries of one provider (0 in tests)
    model_retry_backoff_seconds: float = 0.0
    # Tool-calling agent step budget
    max_agent_steps: int = 6

    model_config = {"env_file": ".env", "env_file_encoding": "utf-8", "env_prefix": "AGP_", "extra": "ignore"}

    @property
    def home_path(self) -> Path:
        return Path(self.home)

    @property
    def config_path(self) -> Path:
        path = Path(self.config_file)
        return path if path.is_absolute() else self.home_path / path


class RuntimeConfig(BaseModel):
    """Contents of agp.json."""

    providers: list[ProviderConfig] = []
    routes: dict[str, RouteConfig] = {}
    optimizer: OptimizerConfig = OptimizerConfig()


def load_runtime_config(path: Optional[str | Path] = None) -> RuntimeConfig:
    """Missing file means defaults; a present but invalid file is a ConfigError."""
    path = Path(path) if path is not None else settings.config_path
    if not path.exists():
        return RuntimeConfig()
    try:
        raw: Any = json.loads(path.read_text(encoding="utf-8"))
        return RuntimeConfig.model_validate(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}", {"path": str(path)})
    except ValidationError as e:
        raise ConfigError(f"{path}: {e.errors()[0]['msg']}", {"path": str(path)})


settings = Settings()
