"""Sandboxed SQL execution, result-set comparison, EX scoring, and grouping."""
from __future__ import annotations

import hashlib
import json
import logging
import sqlite3
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .datasets import dataclass_from_dict, register_artifact
from .sqltext import syntax_check

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 30_000
ROW_CAP = 10_000

# Progress-handler granularity: VM instructions between deadline checks.
_PROGRESS_INTERVAL = 1_000


@register_artifact("execution_outcome")
@dataclass(frozen=True)
class ExecutionOutcome:
    """What happened when a statement ran: rows, a database error, or a timeout."""

    status: str  # rows | db_error | timeout
    rows: tuple = ()
    error_message: str = ""
    elapsed_ms: float = 0.0
    truncated: bool = False

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ExecutionOutcome":
        obj = dict(obj)
        obj["rows"] = tuple(tuple(r) for r in obj.get("rows", ()))
        return dataclass_from_dict(cls, obj)


@dataclass
class CandidateSql:
    """A generated SQL string plus provenance and its execution outcome."""

    sql: str
    model_handle: str = "unknown"
    stage: str = "generation"
    outcome: ExecutionOutcome | None = None


@dataclass
class ExecutionGroup:
    signature: str
    members: list[int]
    representative: int


def execute(db_file: str | Path, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecutionOutcome:
    """Run one statement read-only with a wall-clock cap.

    All outcomes are encoded in the ExecutionOutcome; nothing raises. Write
    statements are rejected up front so evaluation stays idempotent.
    """
    start = time.monotonic()

    def done(status: str, **kw) -> ExecutionOutcome:
        return ExecutionOutcome(status=status, elapsed_ms=(time.monotonic() - start) * 1000.0, **kw)

    verdict = syntax_check(sql)
    if not verdict.ok:
        return done("db_error", error_message=verdict.error_message)
    if verdict.statement_kind != "select":
        return done("db_error", error_message="only SELECT statements are allowed")

    try:
        conn = sqlite3.connect(f"file:{Path(db_file)}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        return done("db_error", error_message=str(exc))

    deadline = start + timeout_ms / 1000.0
    timed_out = False

    def watchdog():
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1
        return 0

    conn.set_progress_handler(watchdog, _PROGRESS_INTERVAL)
    try:
        cursor = conn.execute(sql)
        rows = cursor.fetchmany(ROW_CAP + 1)
        truncated = len(rows) > ROW_CAP
        return done("rows", rows=tuple(tuple(r) for r in rows[:ROW_CAP]), truncated=truncated)
    except sqlite3.Error as exc:
        if timed_out:
            return done("timeout", error_message=f"timeout after {timeout_ms} ms")
        return done("db_error", error_message=str(exc))
    finally:
        conn.close()


def canonical_value(value: Any) -> Any:
    """Canonical comparable form of a cell: numerics unified to 9 significant
    digits (covering the 1e-9 relative tolerance), text and NULL as-is."""
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, (int, float)):
        if value == 0:
            return ("n", "0")
        return ("n", f"{value:.9g}")
    if value is None:
        return ("null",)
    if isinstance(value, bytes):
        return ("b", value.hex())
    return ("t", str(value))


def canonical_rows(rows: Iterable[Sequence[Any]]) -> list[tuple]:
    """Order-insensitive canonical form: sorted list of canonicalized tuples."""
    return sorted(tuple(canonical_value(v) for v in row) for row in rows)


def outcome_signature(outcome: ExecutionOutcome) -> str:
    """Stable hash of the comparable result; equal signatures iff results_equal."""
    if outcome.status == "rows":
        payload = ["rows", canonical_rows(outcome.rows)]
    else:
        payload = [outcome.status, outcome.error_message]
    digest = hashlib.sha256(json.dumps(payload, ensure_ascii=False).encode("utf-8")).hexdigest()
    return digest


def results_equal(a: ExecutionOutcome, b: ExecutionOutcome) -> bool:
    """Row results compare as multisets of canonicalized tuples.

    Errors and timeouts only ever equal an identical (status, message) pair;
    that path exists for grouping and never awards EX credit.
    """
    if a.status == "rows" and b.status == "rows":
        return canonical_rows(a.rows) == canonical_rows(b.rows)
    return a.status == b.status and a.error_message == b.error_message


@dataclass
class EvalPair:
    gold_sql: str
    pred_sql: str
    db_file: str
    difficulty: str = "unknown"
    record_id: str = ""


@dataclass
class EvalReport:
    total: float
    breakdown: dict[str, float | None]
    counts: dict[str, int]
    invalid_gold: list[str] = field(default_factory=list)


def execution_accuracy(pairs: list[EvalPair], timeout_ms: int = DEFAULT_TIMEOUT_MS) -> EvalReport:
    """Execution Accuracy: the fraction of predictions whose rows equal the
    gold rows, with the simple/moderate/challenging/total breakdown.

    Records whose gold SQL fails to execute are excluded and reported.
    """
    correct: dict[str, int] = {}
    seen: dict[str, int] = {}
    invalid = []
    for i, pair in enumerate(pairs):
        gold_out = execute(pair.db_file, pair.gold_sql, timeout_ms)
        if gold_out.status != "rows":
            invalid.append(pair.record_id or str(i))
            continue
        pred_out = execute(pair.db_file, pair.pred_sql, timeout_ms)
        ok = pred_out.status == "rows" and canonical_rows(pred_out.rows) == canonical_rows(gold_out.rows)
        seen[pair.difficulty] = seen.get(pair.difficulty, 0) + 1
        if ok:
            correct[pair.difficulty] = correct.get(pair.difficulty, 0) + 1

    total_seen = sum(seen.values())
    total_correct = sum(correct.values())
    breakdown: dict[str, float | None] = {}
    for difficulty in ("simple", "moderate", "challenging"):
        n = seen.get(difficulty, 0)
        breakdown[difficulty] = (correct.get(difficulty, 0) / n) if n else None
    for extra in sorted(set(seen) - {"simple", "moderate", "challenging"}):
        breakdown[extra] = correct.get(extra, 0) / seen[extra]
    breakdown["total"] = (total_correct / total_seen) if total_seen else 0.0
    counts = {"total": total_seen, "correct": total_correct, "invalid_gold": len(invalid)}
    return EvalReport(total=breakdown["total"], breakdown=breakdown, counts=counts, invalid_gold=invalid)


def group_by_execution(
    candidates: Sequence[CandidateSql | str],
    db_file: str | Path,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> list[ExecutionGroup]:
    """Partition candidates by execution result.

    Groups are ordered by size descending, ties by lowest member index; the
    representative is each group's lowest index. Candidate outcomes are
    filled in when missing.
    """
    if not candidates:
        return []
    outcomes = []
    for cand in candidates:
        if isinstance(cand, CandidateSql):
            if cand.outcome is None:
                cand.outcome = execute(db_file, cand.sql, timeout_ms)
            outcomes.append(cand.outcome)
        else:
            outcomes.append(execute(db_file, cand, timeout_ms))

    by_signature: dict[str, list[int]] = {}
    for idx, outcome in enumerate(outcomes):
        by_signature.setdefault(outcome_signature(outcome), []).append(idx)
    groups = [
        ExecutionGroup(signature=sig, members=members, representative=min(members))
        for sig, members in by_signature.items()
    ]
    groups.sort(key=lambda g: (-len(g.members), g.representative))
    return groups
