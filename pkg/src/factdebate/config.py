"""Operator configuration: YAML file with ${ENV_VAR} interpolation.

Flags always override file values; credentials never live in the file, only
environment variable names do.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from factdebate.core import DebateConfig, GenerationSettings, RoleSetName
from factdebate.gateway import BackendKind, BackendSpec

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


def interpolate_env(value: Any) -> Any:
    """Replace ${VAR} in strings, recursively through lists and mappings."""
    if isinstance(value, str):

        def _sub(match: re.Match[str]) -> str:
            name = match.group(1)
            if name not in os.environ:
                raise ConfigError(name, "environment variable not set")
            return os.environ[name]

        return _ENV_RE.sub(_sub, value)
    if isinstance(value, Mapping):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


def parse_backend(raw: str | Mapping[str, Any], model: str = "") -> BackendSpec:
    """Backend from "scripted:<path>", "http:<url>", "hash[-dim]", or a mapping."""
    if isinstance(raw, Mapping):
        kind = BackendKind(raw.get("kind", "http"))
        return BackendSpec(
            kind=kind,
            model_name=str(raw.get("model", model)),
            endpoint=str(raw.get("endpoint", "")),
            credential_env=str(raw.get("credential_env", "FACTDEBATE_API_KEY")),
            script_path=str(raw.get("script_path", "")),
        )
    text = raw.strip()
    if text.startswith("scripted:"):
        return BackendSpec(
            kind=BackendKind.SCRIPTED, model_name=model, script_path=text[len("scripted:") :]
        )
    if text.startswith("http://") or text.startswith("https://"):
        return BackendSpec(kind=BackendKind.HTTP_PROVIDER, model_name=model, endpoint=text)
    if text.startswith("http:"):
        return BackendSpec(
            kind=BackendKind.HTTP_PROVIDER, model_name=model, endpoint=text[len("http:") :]
        )
    if text == "hash" or re.fullmatch(r"hash-\d+", text):
        return BackendSpec(kind=BackendKind.HASH, model_name=text)
    raise ConfigError("backend", f"cannot parse backend spec {raw!r}")


@dataclass
class RunConfig:
    claims_path: str = ""
    corpus_path: str = ""
    index_dir: str = ""
    output_dir: str = "out"
    cache_dir: str = ""
    backend: BackendSpec | None = None
    embedding_backend: BackendSpec | None = None
    debate: DebateConfig = field(default_factory=DebateConfig)
    concurrency: int = 1
    max_abort_rate: float = 0.0

    def validate_paths(self) -> None:
        for name, path in (("claims_path", self.claims_path), ("corpus_path", self.corpus_path)):
            if path and not Path(path).exists():
                raise ConfigError(name, f"path does not exist: {path}")
        if self.index_dir and not Path(self.index_dir).exists():
            raise ConfigError("index_dir", f"path does not exist: {self.index_dir}")


def _debate_config(data: Mapping[str, Any]) -> DebateConfig:
    generation = GenerationSettings(
        temperature=float(data.get("temperature", 0.0)),
        max_completion_tokens=int(data.get("max_completion_tokens", 512)),
        seed=data.get("seed"),
    )
    try:
        role_set = RoleSetName(str(data.get("role_set", "expertise")))
    except ValueError as exc:
        raise ConfigError("role_set", str(exc)) from exc
    try:
        return DebateConfig(
            role_set=role_set,
            max_rounds=int(data.get("max_rounds", 3)),
            tau_s=float(data.get("tau_s", -0.15)),
            tau_v=float(data.get("tau_v", 0.7)),
            early_stop_enabled=bool(data.get("early_stop_enabled", True)),
            evidence_top_m=int(data.get("evidence_top_m", 20)),
            evidence_char_budget=int(data.get("evidence_char_budget", 8000)),
            generation=generation,
            label_probe_tokens=tuple(data.get("label_probe_tokens", ("TRUE", "HALF", "FALSE"))),
        )
    except ValueError as exc:
        raise ConfigError("debate", str(exc)) from exc


def load_run_config(path: str | Path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, Mapping):
        raise ConfigError("config", "top level must be a mapping")
    data = interpolate_env(raw)
    model = str(data.get("model", ""))
    backend = parse_backend(data["backend"], model) if "backend" in data else None
    embedding = (
        parse_backend(data["embedding_backend"], str(data.get("embedding_model", "")))
        if "embedding_backend" in data
        else None
    )
    config = RunConfig(
        claims_path=str(data.get("claims", "")),
        corpus_path=str(data.get("corpus", "")),
        index_dir=str(data.get("index", "")),
        output_dir=str(data.get("output", "out")),
        cache_dir=str(data.get("cache_dir", "")),
        backend=backend,
        embedding_backend=embedding,
        debate=_debate_config(data.get("debate", {}) or {}),
        concurrency=int(data.get("concurrency", 1)),
        max_abort_rate=float(data.get("max_abort_rate", 0.0)),
    )
    if config.concurrency < 1:
        raise ConfigError("concurrency", "must be >= 1")
    if not 0.0 <= config.max_abort_rate <= 1.0:
        raise ConfigError("max_abort_rate", "must be within [0, 1]")
    return config
