"""Run configuration: flags > environment > config file > defaults."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .errors import MissingFile, ParseError

ENV_PREFIX = "VALUEMAP_"


def shipped_fixture(name: str) -> Path:
    return Path(str(resources.files("valuemap") / "data" / "fixtures" / name))


@dataclass
class RunConfig:
    catalog: str | None = None
    backend: str = "replay"
    model: str = "gpt-4"
    endpoint: str | None = None
    auth_env: str = "OPENAI_API_KEY"
    fixture: str | None = None
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int | None = None
    parallelism: int = 4
    max_attempts: int = 5
    backoff: float = 0.5
    rate_limit: float | None = None
    cache_dir: str | None = None
    entities: list[str] | None = None
    benchmark: str | None = None
    geometry: str | None = None
    geometry_key: str | None = None
    out_dir: str = "runs"
    threshold_ranks: tuple[int, int] = (3, 4)
    projection: object = "identity"
    allow_partial: bool = False
    fail_fast: bool = False
    label_bands: list | None = None
    extra: dict = field(default_factory=dict)

    def fixture_path(self) -> Path:
        return Path(self.fixture) if self.fixture else shipped_fixture("replay_gpt-4.jsonl")


_CASTS = {
    "temperature": float,
    "max_tokens": int,
    "seed": lambda v: None if v in (None, "", "none") else int(v),
    "parallelism": int,
    "max_attempts": int,
    "backoff": float,
    "rate_limit": lambda v: None if v in (None, "", "none") else float(v),
    "allow_partial": lambda v: v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes"),
    "fail_fast": lambda v: v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes"),
    "entities": lambda v: [s.strip() for s in v.split(",") if s.strip()] if isinstance(v, str) else list(v),
    "threshold_ranks": lambda v: tuple(int(x) for x in (v.split(",") if isinstance(v, str) else v)),
}


def _coerce(key: str, value):
    cast = _CASTS.get(key)
    return cast(value) if cast and value is not None else value


def load_config(path=None, flags: dict | None = None, environ=None) -> RunConfig:
    """Merge defaults, a YAML config file, ``VALUEMAP_*`` variables and flags."""
    environ = os.environ if environ is None else environ
    known = {f.name for f in fields(RunConfig)} - {"extra"}
    merged: dict = {}
    extra: dict = {}

    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise MissingFile(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ParseError(f"{path}: {exc}", mark.line + 1 if mark else None) from exc
        if not isinstance(doc, dict):
            raise ParseError(f"{path}: config must be a mapping")
        for key, value in doc.items():
            key = str(key).replace("-", "_")
            (merged if key in known else extra)[key] = value
        # relative paths in a config file resolve against the file
        for key in ("catalog", "fixture", "benchmark", "geometry", "cache_dir", "out_dir"):
            if isinstance(merged.get(key), str) and not Path(merged[key]).is_absolute():
                merged[key] = str(path.parent / merged[key])

    for key in known:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            merged[key] = environ[env_key]

    for key, value in (flags or {}).items():
        if value is not None and key in known:
            merged[key] = value

    try:
        cfg = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()}, extra=extra)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad configuration value: {exc}") from exc
    if len(cfg.threshold_ranks) != 2:
        raise ParseError("threshold_ranks needs exactly two ranks")
    return cfg
