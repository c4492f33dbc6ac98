"""Application configuration: TOML file, environment overrides, backend wiring."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .backends import (
    BackendConfig,
    FunctionCallBackend,
    RuleBasedMockBackend,
    SentinelBackend,
)
from .base import Classifier, IntentGateError
from .dialogue import ThresholdPolicy
from .forest import MODEL_FORMAT, ForestClassifier, load_model

BACKEND_CHOICES = ("forest", "sentinel", "function_call", "mock")

_ENV_PREFIX = "INTENTGATE_"


class ConfigError(IntentGateError):
    pass


@dataclass(frozen=True)
class AppConfig:
    backend: str = "mock"
    model_path: str | None = None
    phase_script_path: str | None = None
    dataset_path: str | None = None
    snapshot_path: str | None = None
    seed: int = 0
    policy: ThresholdPolicy = field(default_factory=ThresholdPolicy)
    remote: BackendConfig | None = None
    host: str = "127.0.0.1"
    port: int = 8088
    mock_latency_seconds: float = 0.0
    bench_backends: tuple[str, ...] = ("forest", "mock")

    def __post_init__(self) -> None:
        if self.backend not in BACKEND_CHOICES:
            raise ConfigError(f"backend must be one of {BACKEND_CHOICES}, got {self.backend!r}")


def _apply_env_overrides(values: dict, env: dict[str, str]) -> dict:
    """INTENTGATE_* variables override top-level scalar settings."""
    mapping = {
        "BACKEND": ("backend", str),
        "MODEL_PATH": ("model_path", str),
        "PHASE_SCRIPT_PATH": ("phase_script_path", str),
        "DATASET_PATH": ("dataset_path", str),
        "SNAPSHOT_PATH": ("snapshot_path", str),
        "SEED": ("seed", int),
    }
    for env_name, (key, cast) in mapping.items():
        raw = env.get(_ENV_PREFIX + env_name)
        if raw is not None:
            try:
                values[key] = cast(raw)
            except ValueError:
                raise ConfigError(f"bad value for {_ENV_PREFIX}{env_name}: {raw!r}") from None
    return values


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> AppConfig:
    """Parse a TOML config file and apply environment overrides.

    API keys are never stored in the file; the file only names the
    environment variable that holds the key.
    """
    if env is None:
        env = dict(os.environ)
    raw: dict = {}
    if path is not None:
        with open(path, "rb") as handle:
            try:
                raw = tomllib.load(handle)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {path}: {exc}") from None

    values: dict = {
        key: raw[key]
        for key in (
            "backend",
            "model_path",
            "phase_script_path",
            "dataset_path",
            "snapshot_path",
            "seed",
        )
        if key in raw
    }
    values = _apply_env_overrides(values, env)

    thresholds = raw.get("thresholds", {})
    policy = ThresholdPolicy(
        act_threshold=float(thresholds.get("act", 0.75)),
        confirm_threshold=float(thresholds.get("confirm", 0.5)),
    )

    remote = None
    if "remote" in raw:
        r = raw["remote"]
        try:
            remote = BackendConfig(
                endpoint_url=r["endpoint_url"],
                model_name=r["model_name"],
                timeout_seconds=float(r.get("timeout_seconds", 30.0)),
                max_retries=int(r.get("max_retries", 2)),
                api_key_env=r.get("api_key_env", ""),
            )
        except KeyError as exc:
            raise ConfigError(f"[remote] section missing {exc.args[0]!r}") from None

    serve_section = raw.get("serve", {})
    mock_section = raw.get("mock", {})
    bench_section = raw.get("bench", {})
    return AppConfig(
        **values,
        policy=policy,
        remote=remote,
        host=env.get(_ENV_PREFIX + "HOST", serve_section.get("host", "127.0.0.1")),
        port=int(env.get(_ENV_PREFIX + "PORT", serve_section.get("port", 8088))),
        mock_latency_seconds=float(mock_section.get("artificial_latency_seconds", 0.0)),
        bench_backends=tuple(bench_section.get("backends", ("forest", "mock"))),
    )


def build_classifier(config: AppConfig) -> tuple[Classifier, str | None]:
    """Instantiate the configured backend; returns (classifier, model format).

    The model format string is populated only for the local forest, whose
    persisted file carries one; /health reports it.
    """
    if config.backend == "forest":
        if not config.model_path:
            raise ConfigError("forest backend requires model_path")
        if not Path(config.model_path).exists():
            raise ConfigError(f"model file not found: {config.model_path}")
        bundle = load_model(config.model_path)
        return ForestClassifier(bundle), MODEL_FORMAT
    if config.backend == "mock":
        return RuleBasedMockBackend(config.mock_latency_seconds), None
    if config.remote is None:
        raise ConfigError(f"backend {config.backend!r} requires a [remote] section")
    if config.backend == "sentinel":
        return SentinelBackend(config.remote), None
    return FunctionCallBackend(config.remote), None
