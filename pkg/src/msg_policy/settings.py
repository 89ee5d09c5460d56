from __future__ import annotations

from dataclasses import dataclass
import os
from pathlib import Path


@dataclass(frozen=True)
class Settings:
    output_root: Path
    log_level: str
    config_path: Path | None


def load_settings() -> Settings:
    output_root = Path(os.getenv("MSG_POLICY_OUTPUT_ROOT", "runs"))
    log_level = os.getenv("LOG_LEVEL", "INFO").upper()

    config_env = os.getenv("MSG_POLICY_CONFIG")
    config_path = Path(config_env) if config_env else None

    return Settings(
        output_root=output_root,
        log_level=log_level,
        config_path=config_path,
    )
