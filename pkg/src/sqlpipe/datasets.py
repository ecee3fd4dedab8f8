"""Benchmark datasets, prediction files, and JSON Lines artifact I/O.

Every intermediate artifact in the pipeline is a JSON Lines file whose
records carry a ``kind`` discriminator, so stages can be chained through
plain files and resumed.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

from .errors import CoverageError, DatasetParseError, DatasetSchemaError, SerializationError

logger = logging.getLogger(__name__)

DIFFICULTIES = ("simple", "moderate", "challenging", "unknown")


@dataclass(frozen=True)
class QuestionRecord:
    """One benchmark item: a question with its database and gold SQL."""

    record_id: str
    question: str
    evidence: str
    db_id: str
    gold_sql: str
    difficulty: str = "unknown"
    repaired: bool = False
    original_sql: str | None = None


@dataclass
class DatasetSplit:
    name: str
    records: list[QuestionRecord]
    source_format: str  # bird | spider

    def record_ids(self) -> list[str]:
        return [r.record_id for r in self.records]


@dataclass
class PredictionFile:
    """Predicted SQL per record id, as emitted by an external generator."""

    entries: dict[str, str]
    model_handle: str = "unknown"


@dataclass(frozen=True)
class ModelHandle:
    """A named model endpoint: generator, judge, or scorer."""

    name: str
    kind: str  # generator | judge | scorer
    endpoint_config_key: str = ""


# Key mapping per source format. Bird carries evidence and difficulty;
# Spider has neither and stores gold SQL under "query".
_FORMAT_KEYS = {
    "bird": {"sql": "SQL", "evidence": "evidence", "difficulty": "difficulty"},
    "spider": {"sql": "query", "evidence": None, "difficulty": None},
}


def load_dataset(path: str | Path, source_format: str) -> DatasetSplit:
    """Load a Bird or Spider JSON file into a DatasetSplit.

    Record ids are synthesized as ``<split-name>:<index>`` so joins stay
    stable across pipeline stages. Missing difficulty maps to "unknown".
    """
    if source_format not in _FORMAT_KEYS:
        raise ValueError(f"unknown source format {source_format!r}")
    path = Path(path)
    name = path.stem
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(str(path), exc.pos, exc.msg) from exc
    if not isinstance(raw, list):
        raise DatasetParseError(str(path), 0, "expected a top-level JSON array")

    keys = _FORMAT_KEYS[source_format]
    records = []
    for i, obj in enumerate(raw):
        for required in ("question", "db_id"):
            if required not in obj:
                raise DatasetSchemaError(str(path), i, required)
        evidence = str(obj.get(keys["evidence"], "") or "") if keys["evidence"] else ""
        difficulty = str(obj.get(keys["difficulty"]) or "unknown") if keys["difficulty"] else "unknown"
        if difficulty not in DIFFICULTIES:
            difficulty = "unknown"
        records.append(
            QuestionRecord(
                record_id=f"{name}:{i}",
                question=str(obj["question"]),
                evidence=evidence,
                db_id=str(obj["db_id"]),
                gold_sql=str(obj.get(keys["sql"], "") or ""),
                difficulty=difficulty,
            )
        )
    return DatasetSplit(name=name, records=records, source_format=source_format)


def save_dataset(split: DatasetSplit, path: str | Path) -> None:
    """Write a split back out in its source format (plus repair annotations)."""
    keys = _FORMAT_KEYS[split.source_format]
    out = []
    for rec in split.records:
        obj: dict[str, Any] = {"question": rec.question, "db_id": rec.db_id, keys["sql"]: rec.gold_sql}
        if keys["evidence"]:
            obj[keys["evidence"]] = rec.evidence
        if keys["difficulty"]:
            obj[keys["difficulty"]] = rec.difficulty
        if rec.repaired:
            obj["repaired"] = True
            obj["original_sql"] = rec.original_sql
        out.append(obj)
    Path(path).write_text(json.dumps(out, ensure_ascii=False, indent=1), encoding="utf-8")


def load_predictions(path: str | Path) -> PredictionFile:
    """Read a predictions JSON file.

    Accepts either ``{"model_handle": ..., "entries": {id: sql}}`` or a
    bare ``{id: sql}`` object.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, dict) and "entries" in raw:
        return PredictionFile(entries=dict(raw["entries"]), model_handle=str(raw.get("model_handle", "unknown")))
    if isinstance(raw, dict):
        return PredictionFile(entries={str(k): str(v) for k, v in raw.items()})
    raise DatasetParseError(str(path), 0, "expected a JSON object of record_id -> SQL")


def save_predictions(preds: PredictionFile, path: str | Path) -> None:
    payload = {"model_handle": preds.model_handle, "entries": preds.entries}
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")


def join_predictions(split: DatasetSplit, preds: PredictionFile) -> list[tuple[QuestionRecord, str]]:
    """Pair each record with its predicted SQL, in split order.

    Raises CoverageError listing every record id the predictions miss;
    extra prediction ids are reported as warnings only.
    """
    missing = [rid for rid in split.record_ids() if rid not in preds.entries]
    if missing:
        raise CoverageError(missing)
    extras = sorted(set(preds.entries) - set(split.record_ids()))
    if extras:
        logger.warning("predictions contain %d ids not in split %s: %s", len(extras), split.name, extras)
    return [(rec, preds.entries[rec.record_id]) for rec in split.records]


# --- JSON Lines artifacts ---------------------------------------------------
#
# Artifact dataclasses from any module register here under their ``kind``
# discriminator so write/read round-trips reconstruct the right type.

_ARTIFACT_TYPES: dict[str, type] = {}


def register_artifact(kind: str):
    def decorate(cls):
        _ARTIFACT_TYPES[kind] = cls
        cls.kind = kind
        return cls

    return decorate


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if hasattr(value, "__dataclass_fields__"):
        return _to_jsonable(asdict(value))
    return value  # let json.dumps raise for anything else


def artifact_to_dict(item: Any) -> dict[str, Any]:
    kind = getattr(item, "kind", None) or getattr(type(item), "kind", None)
    obj = _to_jsonable(asdict(item)) if hasattr(item, "__dataclass_fields__") else _to_jsonable(dict(item))
    if kind and "kind" not in obj:
        obj = {"kind": kind, **obj}
    return obj


def write_artifact(items: Iterable[Any], path: str | Path) -> int:
    """Write artifact records as JSON Lines; returns the count written.

    Serialization is canonical (sorted keys, no ASCII escaping) so repeated
    runs over equal inputs produce byte-identical files.
    """
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for i, item in enumerate(items):
            obj = artifact_to_dict(item)
            try:
                line = json.dumps(obj, ensure_ascii=False, sort_keys=True)
            except TypeError:
                for key, value in obj.items():
                    try:
                        json.dumps(value, ensure_ascii=False)
                    except TypeError:
                        raise SerializationError(i, key) from None
                raise SerializationError(i, "<unknown>") from None
            fh.write(line + "\n")
            count += 1
    return count


def read_artifact(path: str | Path) -> list[Any]:
    """Read a JSON Lines artifact file, reconstructing registered dataclasses.

    Records whose ``kind`` is unregistered come back as plain dicts.
    """
    items = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            cls = _ARTIFACT_TYPES.get(obj.get("kind", ""))
            if cls is not None:
                obj = dict(obj)
                obj.pop("kind", None)
                items.append(cls.from_dict(obj))
            else:
                items.append(obj)
    return items


def _plain_fields(cls, obj: dict[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in obj.items() if k in names}


@register_artifact("question_record")
@dataclass(frozen=True)
class QuestionArtifact:
    """QuestionRecord wrapper for JSON Lines streams."""

    record: QuestionRecord

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "QuestionArtifact":
        return cls(record=QuestionRecord(**_plain_fields(QuestionRecord, obj["record"])))


@register_artifact("candidate")
@dataclass
class CandidateRow:
    """One generated SQL candidate for a record, with provenance."""

    record_id: str
    sql: str
    model_handle: str = "unknown"
    stage: str = "generation"

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "CandidateRow":
        return cls(**_plain_fields(cls, obj))


def dataclass_from_dict(cls, obj: dict[str, Any]):
    """Shallow dataclass hydration for artifact records without nesting."""
    return cls(**_plain_fields(cls, obj))
