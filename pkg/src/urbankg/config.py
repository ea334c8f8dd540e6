"""Pipeline configuration: one YAML or JSON file, credentials only from the environment."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, model_validator

from .agent import AgentConfig
from .llm import CostLedger, Gateway, HttpBackend, MockBackend, RetryPolicy, api_key_from_env, load_mock_script


class ConfigError(ValueError):
    """Every problem found in a config file, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BackendConfig(_Strict):
    kind: Literal["mock", "http"]
    model_id: str = "mock"
    base_url: Optional[str] = None
    api_key_env: Optional[str] = None
    embedding_model: Optional[str] = None
    script: Optional[str] = None  # mock script, relative to the config file
    temperature: float = Field(0.0, ge=0.0)
    max_tokens: int = Field(1024, ge=1)

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "http" and not self.base_url:
            raise ValueError("backend.base_url is required when backend.kind is 'http'")
        return self


class Thresholds(_Strict):
    frequency: int = Field(5, ge=0)
    similarity: float = Field(0.85, ge=-1.0, le=1.0)
    link: float = Field(0.80, ge=-1.0, le=1.0)


class RetryConfig(_Strict):
    max_retries: int = Field(3, ge=0)
    backoff: float = Field(0.5, ge=0.0)
    timeout: float = Field(60.0, gt=0.0)


class Price(_Strict):
    prompt: float = Field(0.0, ge=0.0)
    completion: float = Field(0.0, ge=0.0)


class PipelineConfig(_Strict):
    backend: BackendConfig
    max_iterations: int = Field(3, ge=1)
    eps: float = Field(1e-4, gt=0.0)
    thresholds: Thresholds = Thresholds()
    retry: RetryConfig = RetryConfig()
    max_in_flight: int = Field(4, ge=1)
    prices: dict[str, Price] = {}
    template_version: str = "v1"
    seed: int = 0
    _base_dir: Optional[str] = PrivateAttr(None)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.max_iterations, self.max_in_flight, self.template_version)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self._base_dir is None else Path(self._base_dir) / p

    def make_gateway(self) -> Gateway:
        b = self.backend
        if b.kind == "mock":
            backend = load_mock_script(self.resolve(b.script)) if b.script else MockBackend()
        else:
            key = api_key_from_env(b.api_key_env) if b.api_key_env else None
            backend = HttpBackend(b.base_url, key, b.embedding_model)
        ledger = CostLedger({k: v.model_dump() for k, v in self.prices.items()})
        return Gateway(backend, b.model_id, RetryPolicy(**self.retry.model_dump()), ledger,
                       self.max_in_flight, b.temperature, b.max_tokens)


def _problems(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "(top level)"
        msg = err["msg"]
        if err["type"] == "missing":
            msg = "required key is missing"
        elif err["type"] == "extra_forbidden":
            msg = "unknown key"
        out.append(f"{key}: {msg}")
    return out


def parse_config(data, base_dir: Optional[str] = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError(["(top level): config must be a mapping"])
    try:
        cfg = PipelineConfig(**data)
    except ValidationError as exc:
        raise ConfigError(_problems(exc)) from None
    cfg._base_dir = base_dir
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: not valid {'JSON' if path.suffix == '.json' else 'YAML'}: {exc}"]) from None
    return parse_config(data, str(path.parent))
