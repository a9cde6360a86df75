"""Runtime configuration for the service commands.

Precedence: built-in defaults < config file < PREDI_* environment
variables < command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union


class BadConfig(Exception):
    code = "bad_config"


ENV_PREFIX = "PREDI_"


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data"
    host: str = "127.0.0.1"
    port: int = 8800
    risk_config: Optional[str] = None  # ThresholdConfig JSON path
    model: Optional[str] = None  # stacked model artifact path
    log_level: str = "info"
    api_token: Optional[str] = None  # static bearer token for clinician routes

    @staticmethod
    def load(
        path: Optional[Union[str, Path]] = None,
        env: Optional[Mapping[str, str]] = None,
        **overrides: Any,
    ) -> "RunConfig":
        config = RunConfig()
        if path is not None:
            file_path = Path(path)
            if not file_path.exists():
                raise BadConfig(f"config file not found: {file_path}")
            try:
                data = json.loads(file_path.read_text(encoding="utf-8"))
            except ValueError as exc:
                raise BadConfig(f"config file {file_path} is not valid JSON: {exc}")
            unknown = set(data) - {f.name for f in fields(RunConfig)}
            if unknown:
                raise BadConfig(f"unknown config keys: {sorted(unknown)}")
            config = replace(config, **data)
        env = os.environ if env is None else env
        for f in fields(RunConfig):
            raw = env.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                value: Any = int(raw) if f.name == "port" else raw
                config = replace(config, **{f.name: value})
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        if cleaned:
            config = replace(config, **cleaned)
        config.validate()
        return config

    def validate(self) -> None:
        if not 0 < self.port < 65536:
            raise BadConfig(f"port out of range: {self.port}")
        if self.risk_config is not None and not Path(self.risk_config).exists():
            raise BadConfig(f"threshold config file not found: {self.risk_config}")
        if self.model is not None and not Path(self.model).exists():
            raise BadConfig(f"model artifact not found: {self.model}")
