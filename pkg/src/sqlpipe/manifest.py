"""Run manifests: per-stage input/output hashes, timing, and resume support."""
from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import StageError


def file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StageEntry:
    status: str  # ok | failed
    inputs: dict[str, str]
    outputs: dict[str, str]
    elapsed_ms: float
    error: str = ""


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    stages: dict[str, StageEntry] = field(default_factory=dict)

    @classmethod
    def create(cls, config_hash: str) -> "RunManifest":
        return cls(run_id=uuid.uuid4().hex, config_hash=config_hash)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(run_id=raw["run_id"], config_hash=raw["config_hash"])
        for name, entry in raw.get("stages", {}).items():
            manifest.stages[name] = StageEntry(**entry)
        return manifest

    @classmethod
    def load_or_create(cls, path: str | Path, config_hash: str) -> "RunManifest":
        path = Path(path)
        if path.exists():
            manifest = cls.load(path)
            if manifest.config_hash == config_hash:
                return manifest
        return cls.create(config_hash)

    def save(self, path: str | Path) -> None:
        payload = {
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "stages": {name: vars(entry) for name, entry in self.stages.items()},
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")

    def can_skip(self, name: str, inputs: Iterable[str | Path], outputs: Iterable[str | Path]) -> bool:
        """A stage is skippable when its recorded input and output hashes all
        match what is on disk right now."""
        entry = self.stages.get(name)
        if entry is None or entry.status != "ok":
            return False
        for path in inputs:
            path = Path(path)
            if str(path) not in entry.inputs or not path.exists() or file_hash(path) != entry.inputs[str(path)]:
                return False
        for path in outputs:
            path = Path(path)
            if str(path) not in entry.outputs or not path.exists() or file_hash(path) != entry.outputs[str(path)]:
                return False
        return True

    def run_stage(
        self,
        name: str,
        inputs: list[str | Path],
        outputs: list[str | Path],
        fn: Callable[[], None],
        resume: bool = False,
    ) -> bool:
        """Execute one stage with bookkeeping; returns False when skipped.

        On failure the stage is recorded as failed and StageError is raised;
        previously written artifacts are left untouched.
        """
        if resume and self.can_skip(name, inputs, outputs):
            return False
        start = time.monotonic()
        try:
            fn()
        except Exception as exc:
            self.stages[name] = StageEntry(
                status="failed",
                inputs={str(p): file_hash(p) for p in inputs if Path(p).exists()},
                outputs={},
                elapsed_ms=(time.monotonic() - start) * 1000.0,
                error=str(exc),
            )
            raise StageError(f"stage {name} failed: {exc}") from exc
        self.stages[name] = StageEntry(
            status="ok",
            inputs={str(p): file_hash(p) for p in inputs if Path(p).exists()},
            outputs={str(p): file_hash(p) for p in outputs if Path(p).exists()},
            elapsed_ms=(time.monotonic() - start) * 1000.0,
        )
        return True
