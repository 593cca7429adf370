"""Service configuration: one TOML or JSON file plus env-var overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ENV_PREFIX = "PULSE_"

DEFAULT_UPLOAD_LIMIT = 512 * 1024 * 1024  # uploads beyond this are rejected


@dataclass
class ServiceConfig:
    addr: str = "127.0.0.1:8000"
    data_dir: str = "./pulse-data"
    tokens_file: str | None = None
    heartbeat_timeout: float = 30.0
    heartbeat_interval: float = 10.0
    sweep_interval: float = 5.0
    max_attempts: int = 3
    upload_limit_bytes: int = DEFAULT_UPLOAD_LIMIT
    resampling: str = "bilinear"
    worker_enabled: bool = True

    @property
    def host(self) -> str:
        return self.addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        try:
            return int(self.addr.rsplit(":", 1)[1])
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"addr {self.addr!r} is not host:port") from exc


def load_config(path: str | os.PathLike | None = None,
                env: dict | None = None) -> ServiceConfig:
    """Read the config file (TOML by default, JSON for .json) and apply
    PULSE_ADDR / PULSE_DATA_DIR / PULSE_TOKENS_FILE overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file {p} does not exist")
        if p.suffix == ".json":
            data = json.loads(p.read_text())
        else:
            data = tomllib.loads(p.read_text())
    known = {f.name for f in fields(ServiceConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    cfg = ServiceConfig(**data)
    if env.get(ENV_PREFIX + "ADDR"):
        cfg.addr = env[ENV_PREFIX + "ADDR"]
    if env.get(ENV_PREFIX + "DATA_DIR"):
        cfg.data_dir = env[ENV_PREFIX + "DATA_DIR"]
    if env.get(ENV_PREFIX + "TOKENS_FILE"):
        cfg.tokens_file = env[ENV_PREFIX + "TOKENS_FILE"]
    return cfg


def load_tokens(path: str | os.PathLike | None) -> dict[str, str]:
    """Token -> display-name mapping; static bearer tokens."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"tokens file {p} does not exist")
    if p.suffix == ".json":
        data = json.loads(p.read_text())
    else:
        data = tomllib.loads(p.read_text())
    if not isinstance(data, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in data.items()):
        raise ValidationError("tokens file must map token -> user name")
    return data
