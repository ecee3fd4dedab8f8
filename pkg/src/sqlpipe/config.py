"""Pipeline configuration: one structured YAML file, env vars only for secrets."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datasets import ModelHandle
from .errors import ConfigError
from .execution import DEFAULT_TIMEOUT_MS
from .gateway import DEFAULT_MAX_IN_FLIGHT, HttpBackend, JudgeGateway, MockBackend, TranscriptStore
from .linking import LinkConfig


@dataclass
class AugmentConfig:
    k: int = 3
    iteration_cap: int = 2
    strategies: list[str] = field(default_factory=lambda: ["query", "example"])


@dataclass
class PipelineConfig:
    db_root: Path
    out_dir: Path = Path("out")
    mode: str = "mock"  # mock | live
    transcript_store: Path | None = None
    record: bool = False
    template_dir: Path | None = None
    models: dict[str, ModelHandle] = field(default_factory=dict)
    endpoints: dict[str, dict] = field(default_factory=dict)
    judges: list[str] = field(default_factory=list)
    default_judge: str = ""
    default_generator: str = ""
    link: LinkConfig = field(default_factory=LinkConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_reasks: int = 2
    max_in_flight: int = DEFAULT_MAX_IN_FLIGHT
    raw: dict = field(default_factory=dict)

    def model(self, name: str) -> ModelHandle:
        if name not in self.models:
            raise ConfigError(f"model {name!r} is not registered")
        return self.models[name]

    def judge_handles(self) -> list[ModelHandle]:
        return [self.model(name) for name in self.judges]


def config_hash(raw: dict) -> str:
    """Hash of the parsed config; key order in the file does not matter."""
    canonical = json.dumps(raw, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _parse_models(raw_models: Any) -> dict[str, ModelHandle]:
    models: dict[str, ModelHandle] = {}
    for entry in raw_models or []:
        handle = ModelHandle(
            name=str(entry["name"]),
            kind=str(entry.get("kind", "judge")),
            endpoint_config_key=str(entry.get("endpoint", "")),
        )
        if handle.name in models:
            raise ConfigError(f"duplicate model name {handle.name!r}")
        models[handle.name] = handle
    return models


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate the pipeline config; raises ConfigError on any
    missing path or dangling model reference before a stage can run."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "db_root" not in raw:
        raise ConfigError("config is missing db_root")

    db_root = Path(str(raw["db_root"]))
    if not db_root.exists():
        raise ConfigError(f"db_root does not exist: {db_root}")
    template_dir = Path(str(raw["template_dir"])) if raw.get("template_dir") else None
    if template_dir and not template_dir.exists():
        raise ConfigError(f"template_dir does not exist: {template_dir}")

    mode = str(raw.get("mode", "mock"))
    if mode not in ("mock", "live"):
        raise ConfigError(f"mode must be mock or live, got {mode!r}")
    transcript = Path(str(raw["transcript_store"])) if raw.get("transcript_store") else None
    if mode == "mock" and transcript is None:
        raise ConfigError("mock mode requires transcript_store")

    models = _parse_models(raw.get("models"))
    judges = [str(j) for j in raw.get("judges", [])]
    for name in judges:
        if name not in models:
            raise ConfigError(f"judge {name!r} is not a registered model")
    if judges and len(judges) % 2 == 0:
        raise ConfigError("judges must be an odd count")
    for key in ("default_judge", "default_generator"):
        name = raw.get(key, "")
        if name and name not in models:
            raise ConfigError(f"{key} {name!r} is not a registered model")

    link_raw = raw.get("link", {}) or {}
    augment_raw = raw.get("augment", {}) or {}
    cfg = PipelineConfig(
        db_root=db_root,
        out_dir=Path(str(raw.get("out_dir", "out"))),
        mode=mode,
        transcript_store=transcript,
        record=bool(raw.get("record", False)),
        template_dir=template_dir,
        models=models,
        endpoints={str(k): dict(v) for k, v in (raw.get("endpoints") or {}).items()},
        judges=judges,
        default_judge=str(raw.get("default_judge", judges[0] if judges else "")),
        default_generator=str(raw.get("default_generator", "")),
        link=LinkConfig(**link_raw),
        augment=AugmentConfig(
            k=int(augment_raw.get("k", 3)),
            iteration_cap=int(augment_raw.get("iteration_cap", 2)),
            strategies=[str(s) for s in augment_raw.get("strategies", ["query", "example"])],
        ),
        timeout_ms=int(raw.get("timeout_ms", DEFAULT_TIMEOUT_MS)),
        max_reasks=int(raw.get("max_reasks", 2)),
        max_in_flight=int(raw.get("max_in_flight", DEFAULT_MAX_IN_FLIGHT)),
        raw=raw,
    )
    if mode == "live" and not cfg.endpoints:
        raise ConfigError("live mode requires endpoints")
    return cfg


def build_gateway(cfg: PipelineConfig, backend=None) -> JudgeGateway:
    """Gateway per the config's mode; a caller-supplied backend wins (tests
    and recording sessions use callable backends)."""
    record_store = None
    if cfg.record and cfg.transcript_store is not None:
        record_store = TranscriptStore(cfg.transcript_store)
    if backend is None:
        if cfg.mode == "mock":
            backend = MockBackend(TranscriptStore(cfg.transcript_store))
        else:
            backend = HttpBackend(cfg.endpoints)
    return JudgeGateway(backend, max_in_flight=cfg.max_in_flight, record_store=record_store)


def resolve_db_path(db_root: str | Path, db_id: str) -> Path:
    """Find a database file under the benchmark layout ``db_root/<db_id>/<db_id>.sqlite``
    or flat ``db_root/<db_id>.sqlite`` (also .db)."""
    db_root = Path(db_root)
    for candidate in (
        db_root / db_id / f"{db_id}.sqlite",
        db_root / db_id / f"{db_id}.db",
        db_root / f"{db_id}.sqlite",
        db_root / f"{db_id}.db",
    ):
        if candidate.exists():
            return candidate
    raise ConfigError(f"no database file for db_id {db_id!r} under {db_root}")
