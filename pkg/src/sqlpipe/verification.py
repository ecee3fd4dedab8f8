"""Query, SQL, and consistency checks with mode-dependent gating.

Every check fails closed: a judge response that cannot be parsed after the
allowed re-asks counts as a No, and a required check that never ran means
the pair is rejected.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .datasets import ModelHandle, dataclass_from_dict, register_artifact
from .errors import InputError, VerdictParseError
from .execution import DEFAULT_TIMEOUT_MS, execute
from .gateway import CallParams, JudgeGateway
from .sqltext import syntax_check

logger = logging.getLogger(__name__)

MODES = ("query_diffusion", "example_diffusion", "repair", "synthesis")

# Which checks gate which mode: paraphrased queries keep their known-good
# SQL, so only the query-side checks run; rewritten/synthesized SQL needs
# the SQL-side checks instead. Consistency always runs last.
REQUIRED_CHECKS: dict[str, tuple[str, ...]] = {
    "query_diffusion": ("query_check", "consistency"),
    "example_diffusion": ("sql_check", "consistency"),
    "synthesis": ("sql_check", "consistency"),
    "repair": ("sql_check", "consistency"),
}


@dataclass
class CheckPolicy:
    judges: list[ModelHandle] = field(default_factory=list)
    max_reasks: int = 2
    required_checks: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(REQUIRED_CHECKS))
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self):
        if self.judges and len(self.judges) % 2 == 0:
            raise InputError("judge count must be odd")


@register_artifact("verdict_bundle")
@dataclass
class VerdictBundle:
    mode: str
    overall: str = "reject"  # accept | reject
    query_fluent: bool | None = None
    query_similar: bool | None = None
    sql_legal: bool | None = None
    sql_diagnostics: str = ""
    consistency_votes: list[tuple[str, bool]] = field(default_factory=list)
    consistent: bool | None = None
    checks_run: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "VerdictBundle":
        obj = dict(obj)
        obj["consistency_votes"] = [tuple(v) for v in obj.get("consistency_votes", [])]
        return dataclass_from_dict(cls, obj)


def query_check(
    original: str,
    variant: str,
    judge: ModelHandle,
    gateway: JudgeGateway,
    max_reasks: int = 2,
) -> tuple[bool, bool]:
    """Fluency of the variant plus core-expression similarity to the original."""
    if not original.strip() or not variant.strip():
        raise InputError("query check requires two non-empty texts")

    def ask(template_id: str, bindings: dict[str, str]) -> bool:
        try:
            return gateway.ask(judge, template_id, bindings, kind="yes_no", max_reasks=max_reasks).as_bool()
        except VerdictParseError:
            return False

    fluent = ask("query_fluency_check", {"query": variant})
    similar = ask("query_similarity_check", {"query1": original, "query2": variant})
    return fluent, similar


@dataclass
class SqlCheckResult:
    legal: bool
    diagnostics: str = ""


def sql_check(sql: str, db_file: str | Path, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> SqlCheckResult:
    """Legal iff the statement parses and executes to rows on the database."""
    verdict = syntax_check(sql)
    if not verdict.ok:
        return SqlCheckResult(legal=False, diagnostics=f"parse: {verdict.error_message}")
    outcome = execute(db_file, sql, timeout_ms)
    if outcome.status != "rows":
        return SqlCheckResult(legal=False, diagnostics=f"{outcome.status}: {outcome.error_message}")
    return SqlCheckResult(legal=True)


def consistency_check(
    query: str,
    schema_text: str,
    sql: str,
    policy: CheckPolicy,
    gateway: JudgeGateway,
) -> tuple[bool, list[tuple[str, bool]]]:
    """Majority vote across the policy's judges on whether the SQL answers
    the query; per-judge parse failures count as No."""
    if not policy.judges or len(policy.judges) % 2 == 0:
        raise InputError("consistency check needs an odd judge count")
    votes: list[tuple[str, bool]] = []
    bindings = {"query": query, "table_info": schema_text, "SQL": sql}
    for judge in policy.judges:
        try:
            verdict = gateway.ask(
                judge,
                "consistency_check",
                bindings,
                kind="completed_reason",
                params=CallParams(),
                max_reasks=policy.max_reasks,
            )
            votes.append((judge.name, verdict.as_bool()))
        except VerdictParseError:
            votes.append((judge.name, False))
    yes = sum(1 for _, v in votes if v)
    return yes > len(votes) - yes, votes


def verify_pair(
    query: str,
    sql: str,
    db_file: str | Path,
    schema_text: str,
    mode: str,
    policy: CheckPolicy,
    gateway: JudgeGateway,
    original_query: str | None = None,
) -> VerdictBundle:
    """Run exactly the mode's required checks, cheapest first, short-circuiting
    on the first failure. The bundle records which checks actually ran."""
    if mode not in MODES:
        raise InputError(f"unknown verification mode {mode!r}")
    required = policy.required_checks.get(mode, ())
    if "query_check" in required and not (original_query and original_query.strip()):
        raise InputError(f"mode {mode} requires the original query")

    bundle = VerdictBundle(mode=mode)
    ordered = [c for c in ("sql_check", "query_check", "consistency") if c in required]
    for check in ordered:
        if check == "sql_check":
            result = sql_check(sql, db_file, policy.timeout_ms)
            bundle.sql_legal = result.legal
            bundle.sql_diagnostics = result.diagnostics
            bundle.checks_run.append(check)
            if not result.legal:
                return bundle
        elif check == "query_check":
            judge = policy.judges[0] if policy.judges else None
            if judge is None:
                raise InputError("query check requires a judge")
            fluent, similar = query_check(original_query, query, judge, gateway, policy.max_reasks)
            bundle.query_fluent = fluent
            bundle.query_similar = similar
            bundle.checks_run.append(check)
            if not (fluent and similar):
                return bundle
        elif check == "consistency":
            consistent, votes = consistency_check(query, schema_text, sql, policy, gateway)
            bundle.consistent = consistent
            bundle.consistency_votes = votes
            bundle.checks_run.append(check)
            if not consistent:
                return bundle
    if all(c in bundle.checks_run for c in required):
        bundle.overall = "accept"
    return bundle
