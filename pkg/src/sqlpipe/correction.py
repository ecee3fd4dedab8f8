"""Two-step semantic correction followed by error-message-driven syntax fixes.

Semantic correction runs first because its fixes can themselves introduce
grammatical mistakes; the syntax stage then repairs anything the database
rejects. A parseable input is never degraded into an unparseable output.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .datasets import ModelHandle, dataclass_from_dict, register_artifact
from .errors import GatewayError, InputError
from .execution import DEFAULT_TIMEOUT_MS, execute
from .gateway import CallParams, JudgeGateway
from .sqltext import normalize_sql, syntax_check

logger = logging.getLogger(__name__)

# Judges are told to reply with exactly this sentence when nothing is wrong.
NO_OP_SENTINEL = "The SQL query is correct, and no modifications are needed."

_FENCE = re.compile(r"```(?:sql|sqlite)?\s*(.*?)```", re.DOTALL | re.IGNORECASE)


@register_artifact("correction_trace")
@dataclass
class CorrectionTrace:
    record_id: str
    input_sql: str
    suggestions: str = ""
    semantic_sql: str = ""
    syntax_attempts: list[tuple[str, str]] = field(default_factory=list)  # (error message, candidate sql)
    final_sql: str = ""
    changed: bool = False
    stages: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "CorrectionTrace":
        obj = dict(obj)
        obj["syntax_attempts"] = [tuple(a) for a in obj.get("syntax_attempts", [])]
        return dataclass_from_dict(cls, obj)


def strip_sql_response(text: str) -> str:
    """Pull the SQL statement out of a judge response: unwrap code fences,
    drop a trailing semicolon, take the first statement."""
    m = _FENCE.search(text)
    body = m.group(1) if m else text
    body = body.strip()
    if body.endswith(";"):
        body = body[:-1].rstrip()
    return body


def semantic_suggest(
    question: str,
    evidence: str,
    sql: str,
    schema_text: str,
    judge: ModelHandle,
    gateway: JudgeGateway,
) -> str:
    """Step one: ask the judge for modification suggestions (raw text).

    A response equal to the no-op sentinel means the second step is skipped.
    """
    if not question.strip() or not sql.strip() or not schema_text.strip():
        raise InputError("semantic_suggest requires question, sql, and schema text")
    bound_question = f"{evidence}; {question}" if evidence.strip() else question
    verdict = gateway.ask(
        judge,
        "semantic_suggest",
        {"question": bound_question, "SQL": sql, "table_info": schema_text},
        kind="free_text",
        params=CallParams(),
    )
    return verdict.raw


def is_noop_suggestions(suggestions: str) -> bool:
    return suggestions.strip() == NO_OP_SENTINEL


def semantic_fix(
    question: str,
    sql: str,
    suggestions: str,
    schema_text: str,
    judge: ModelHandle,
    gateway: JudgeGateway,
) -> tuple[str, bool]:
    """Step two: apply the suggestions. Returns (sql, applied).

    The fix is only adopted when it parses; otherwise the original SQL is
    kept so correction never makes a statement worse."""
    if not suggestions.strip() or is_noop_suggestions(suggestions):
        raise InputError("semantic_fix requires non-sentinel suggestions")
    verdict = gateway.ask(
        judge,
        "semantic_fix",
        {"suggestion": suggestions, "question": question, "SQL": sql, "table_info": schema_text},
        kind="free_text",
        params=CallParams(),
    )
    fixed = strip_sql_response(verdict.raw)
    if fixed and syntax_check(fixed).ok:
        return fixed, True
    logger.warning("semantic fix does not parse; keeping the original statement")
    return sql, False


def syntax_fix(
    question: str,
    sql: str,
    db_file: str | Path,
    schema_text: str,
    judge: ModelHandle,
    gateway: JudgeGateway,
    max_rounds: int = 2,
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> tuple[str, list[tuple[str, str]]]:
    """Re-ask the judge with the verbatim engine error until the statement
    runs or the round budget is spent. Candidates that do not parse are
    recorded but never adopted."""
    attempts: list[tuple[str, str]] = []
    current = sql
    for _ in range(max_rounds):
        outcome = execute(db_file, current, timeout_ms)
        if outcome.status != "db_error":
            return current, attempts
        try:
            verdict = gateway.ask(
                judge,
                "syntax_fix",
                {
                    "error": outcome.error_message,
                    "question": question,
                    "sql": current,
                    "table_info": schema_text,
                },
                kind="free_text",
                params=CallParams(),
            )
        except GatewayError as exc:
            logger.warning("syntax fix call failed: %s", exc)
            return current, attempts
        candidate = strip_sql_response(verdict.raw)
        attempts.append((outcome.error_message, candidate))
        if candidate and syntax_check(candidate).ok:
            current = candidate
    return current, attempts


@dataclass
class CorrectionContext:
    question: str
    evidence: str
    schema_text: str
    db_file: str
    judge: ModelHandle
    gateway: JudgeGateway
    max_syntax_rounds: int = 2
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    record_id: str = ""


def correct(sql: str, ctx: CorrectionContext) -> CorrectionTrace:
    """Full correction pipeline for one candidate: suggest, fix, then syntax.

    Gateway failures degrade stage by stage; the record itself never aborts.
    """
    trace = CorrectionTrace(record_id=ctx.record_id, input_sql=sql, semantic_sql=sql)
    suggestions = ""
    try:
        suggestions = semantic_suggest(ctx.question, ctx.evidence, sql, ctx.schema_text, ctx.judge, ctx.gateway)
        trace.stages.append("semantic_suggest")
        trace.suggestions = suggestions
    except (GatewayError, InputError) as exc:
        trace.notes.append(f"semantic_suggest skipped: {exc}")

    if suggestions and not is_noop_suggestions(suggestions):
        try:
            fixed, applied = semantic_fix(
                ctx.question, sql, suggestions, ctx.schema_text, ctx.judge, ctx.gateway
            )
            trace.stages.append("semantic_fix")
            trace.semantic_sql = fixed
            if not applied:
                trace.notes.append("semantic fix rejected: result does not parse")
        except (GatewayError, InputError) as exc:
            trace.notes.append(f"semantic_fix skipped: {exc}")
    elif suggestions:
        trace.notes.append("no-op sentinel: semantic fix skipped")

    final, attempts = syntax_fix(
        ctx.question,
        trace.semantic_sql,
        ctx.db_file,
        ctx.schema_text,
        ctx.judge,
        ctx.gateway,
        max_rounds=ctx.max_syntax_rounds,
        timeout_ms=ctx.timeout_ms,
    )
    trace.stages.append("syntax_fix")
    trace.syntax_attempts = attempts
    trace.final_sql = final
    trace.changed = normalize_sql(final) != normalize_sql(sql)
    return trace
