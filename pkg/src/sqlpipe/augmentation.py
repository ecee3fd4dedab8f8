"""Error collection, query/example diffusion, pair synthesis, and SFT assembly.

All generated pairs are gated by the verification stack before they can ever
reach a training file; rejected pairs are kept (with their verdicts) for
audit but never exported.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .catalog import SchemaGraph, serialize_schema
from .datasets import (
    DatasetSplit,
    ModelHandle,
    PredictionFile,
    QuestionRecord,
    dataclass_from_dict,
    join_predictions,
    register_artifact,
    write_artifact,
)
from .errors import GatewayError, InputError
from .execution import DEFAULT_TIMEOUT_MS, execute, results_equal
from .gateway import CallParams, JudgeGateway, find_json_objects
from .linking import LinkResult
from .sqltext import extract_tables, normalize_sql, syntax_check
from .verification import CheckPolicy, VerdictBundle, verify_pair

logger = logging.getLogger(__name__)

KINDS = ("query_diffusion", "example_diffusion", "sql2query", "query2sql")
KIND_TO_MODE = {
    "query_diffusion": "query_diffusion",
    "example_diffusion": "example_diffusion",
    "sql2query": "synthesis",
    "query2sql": "synthesis",
}

SFT_INSTRUCTION = "Based on the following database schema, write one SQLite query that answers the question."

GENERATOR_PARAMS = CallParams(temperature=0.7)


@dataclass
class ErrorSet:
    """Records whose prediction execution-differs from gold, per iteration."""

    records: list[QuestionRecord]
    iteration: int = 1
    excluded: list[str] = field(default_factory=list)


@register_artifact("augmented_pair")
@dataclass
class AugmentedPair:
    source_record_id: str
    kind: str
    query: str
    sql: str
    db_id: str
    generator: str
    verdict: VerdictBundle

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "AugmentedPair":
        obj = dict(obj)
        obj["verdict"] = VerdictBundle.from_dict(obj["verdict"])
        return dataclass_from_dict(cls, obj)

    @property
    def accepted(self) -> bool:
        return self.verdict.overall == "accept"


@dataclass(frozen=True)
class SftExample:
    instruction: str
    schema_text: str
    question: str
    sql: str
    db_id: str
    origin: str  # original | one of KINDS


@dataclass
class SftFile:
    examples: list[SftExample]
    lineage: dict[str, int]


def collect_errors(
    split: DatasetSplit,
    predictions: PredictionFile,
    db_resolver: Callable[[str], Path],
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
    iteration: int = 1,
) -> ErrorSet:
    """Records where the prediction's execution differs from gold's.

    Membership is decided by result comparison, never string equality.
    Records whose gold fails to execute are excluded and reported.
    """
    members = []
    excluded = []
    for record, pred_sql in join_predictions(split, predictions):
        db_file = db_resolver(record.db_id)
        gold_out = execute(db_file, record.gold_sql, timeout_ms)
        if gold_out.status != "rows":
            excluded.append(record.record_id)
            logger.warning("gold SQL of %s does not execute: %s", record.record_id, gold_out.error_message)
            continue
        pred_out = execute(db_file, pred_sql, timeout_ms)
        if not results_equal(gold_out, pred_out):
            members.append(record)
    return ErrorSet(records=members, iteration=iteration, excluded=excluded)


_LINE_PREFIX = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s*)")


def _response_lines(text: str) -> list[str]:
    lines = []
    for line in text.splitlines():
        line = _LINE_PREFIX.sub("", line).strip()
        if line:
            lines.append(line)
    return lines


def query_diffusion(
    record: QuestionRecord,
    generator: ModelHandle,
    k: int,
    gateway: JudgeGateway,
    db_file: str | Path,
    schema_text: str,
    policy: CheckPolicy,
) -> list[AugmentedPair]:
    """Paraphrase the question k times, keeping the gold SQL fixed.

    Every paraphrase is verified in query_diffusion mode; only accepted
    pairs are returned."""
    if k == 0:
        return []
    try:
        verdict = gateway.ask(
            generator,
            "paraphrase_generate",
            {"k": str(k), "question": record.question},
            kind="free_text",
            params=GENERATOR_PARAMS,
        )
    except GatewayError as exc:
        logger.warning("paraphrase generation failed for %s: %s", record.record_id, exc)
        return []
    variants = []
    seen = set()
    for line in _response_lines(verdict.raw):
        if line.lower() not in seen and line.lower() != record.question.lower():
            seen.add(line.lower())
            variants.append(line)
        if len(variants) == k:
            break
    accepted = []
    for variant in variants:
        bundle = verify_pair(
            query=variant,
            sql=record.gold_sql,
            db_file=db_file,
            schema_text=schema_text,
            mode="query_diffusion",
            policy=policy,
            gateway=gateway,
            original_query=record.question,
        )
        if bundle.overall == "accept":
            accepted.append(
                AugmentedPair(
                    source_record_id=record.record_id,
                    kind="query_diffusion",
                    query=variant,
                    sql=record.gold_sql,
                    db_id=record.db_id,
                    generator=generator.name,
                    verdict=bundle,
                )
            )
    return accepted


def _parse_pair_objects(text: str) -> list[dict[str, str]]:
    pairs = []
    for span in find_json_objects(text):
        try:
            obj = json.loads(span)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            keys = {k.lower(): v for k, v in obj.items()}
            if "query" in keys and "sql" in keys:
                pairs.append({"query": str(keys["query"]), "sql": str(keys["sql"])})
    return pairs


def example_diffusion(
    record: QuestionRecord,
    target_graph: SchemaGraph,
    generator: ModelHandle,
    gateway: JudgeGateway,
    target_db_file: str | Path,
    policy: CheckPolicy,
) -> AugmentedPair | None:
    """Rewrite a (question, SQL) pair onto a different database's schema.

    SQL that names tables outside the target schema is rejected before any
    judge call. Returns the pair with its verdict, or None when the
    generator produced nothing parseable."""
    if target_graph.db_id == record.db_id:
        raise InputError("example diffusion requires a target database different from the source")
    target_schema = serialize_schema(target_graph)
    try:
        verdict = gateway.ask(
            generator,
            "example_rewrite",
            {"query": record.question, "SQL": record.gold_sql, "table_info": target_schema},
            kind="free_text",
            params=GENERATOR_PARAMS,
        )
    except GatewayError as exc:
        logger.warning("example rewrite failed for %s: %s", record.record_id, exc)
        return None
    parsed = _parse_pair_objects(verdict.raw)
    if not parsed:
        logger.warning("example rewrite for %s returned no query/sql object", record.record_id)
        return None
    query, sql = parsed[0]["query"], parsed[0]["sql"]

    def pair(bundle: VerdictBundle) -> AugmentedPair:
        return AugmentedPair(
            source_record_id=record.record_id,
            kind="example_diffusion",
            query=query,
            sql=sql,
            db_id=target_graph.db_id,
            generator=generator.name,
            verdict=bundle,
        )

    known = {t.lower() for t in target_graph.table_names()}
    if syntax_check(sql).ok and not extract_tables(sql).names <= known:
        outside = sorted(extract_tables(sql).names - known)
        bundle = VerdictBundle(mode="example_diffusion", sql_legal=False,
                               sql_diagnostics=f"references tables outside target schema: {outside}")
        bundle.checks_run.append("sql_check")
        return pair(bundle)
    bundle = verify_pair(
        query=query,
        sql=sql,
        db_file=target_db_file,
        schema_text=target_schema,
        mode="example_diffusion",
        policy=policy,
        gateway=gateway,
    )
    return pair(bundle)


def sql2query(
    sql: str,
    graph: SchemaGraph,
    generator: ModelHandle,
    gateway: JudgeGateway,
    db_file: str | Path,
    policy: CheckPolicy,
    source_record_id: str = "",
) -> AugmentedPair:
    """Summarize a SQL statement into a one-sentence user query.

    Two generator turns: an interpretation of the statement over the schema
    restricted to its own tables, then the one-sentence summary. The result
    is gated in synthesis mode."""
    if not syntax_check(sql).ok:
        raise InputError(f"sql2query requires parseable SQL: {syntax_check(sql).error_message}")
    tables = extract_tables(sql).names
    selection = {t.name: [] for t in graph.tables if t.name.lower() in tables}
    restricted = serialize_schema(graph, selection=selection) if selection else serialize_schema(graph)
    interpretation = gateway.ask(
        generator,
        "sql_interpret",
        {"table_info": restricted, "SQL": sql},
        kind="free_text",
        params=GENERATOR_PARAMS,
    ).raw
    summary = gateway.ask(
        generator,
        "sql_summarize",
        {"interpretation": interpretation},
        kind="free_text",
        params=GENERATOR_PARAMS,
    ).raw
    lines = _response_lines(summary)
    query = lines[0] if lines else ""
    bundle = verify_pair(
        query=query,
        sql=sql,
        db_file=db_file,
        schema_text=restricted,
        mode="synthesis",
        policy=policy,
        gateway=gateway,
    )
    return AugmentedPair(
        source_record_id=source_record_id,
        kind="sql2query",
        query=query,
        sql=sql,
        db_id=graph.db_id,
        generator=generator.name,
        verdict=bundle,
    )


def query2sql(
    graph: SchemaGraph,
    generator: ModelHandle,
    k: int,
    gateway: JudgeGateway,
    db_file: str | Path,
    policy: CheckPolicy,
) -> list[AugmentedPair]:
    """Synthesize up to k query-SQL pairs from the schema alone."""
    if k < 1:
        raise InputError("query2sql requires k >= 1")
    if not graph.tables:
        raise InputError("query2sql requires a schema with at least one table")
    try:
        verdict = gateway.ask(
            generator,
            "pair_synthesize",
            {"k": str(k), "table_info": serialize_schema(graph)},
            kind="free_text",
            params=GENERATOR_PARAMS,
        )
    except GatewayError as exc:
        logger.warning("pair synthesis failed on %s: %s", graph.db_id, exc)
        return []
    pairs = []
    for obj in _parse_pair_objects(verdict.raw)[:k]:
        bundle = verify_pair(
            query=obj["query"],
            sql=obj["sql"],
            db_file=db_file,
            schema_text=serialize_schema(graph),
            mode="synthesis",
            policy=policy,
            gateway=gateway,
        )
        pairs.append(
            AugmentedPair(
                source_record_id="",
                kind="query2sql",
                query=obj["query"],
                sql=obj["sql"],
                db_id=graph.db_id,
                generator=generator.name,
                verdict=bundle,
            )
        )
    return [p for p in pairs if p.accepted]


def _norm_question(text: str) -> str:
    return " ".join(text.lower().split())


def build_active_learning_set(
    split: DatasetSplit,
    accepted: list[AugmentedPair],
    link_results: dict[str, LinkResult] | None,
    graphs: dict[str, SchemaGraph],
    iteration: int = 1,
) -> SftFile:
    """Combine the original split with verified augmented pairs into one
    deduplicated SFT set, with lineage counts per origin.

    Schema text for originals comes from their linking selection when
    available; augmented pairs use the full schema of their database.
    Questions carry the evidence prefix used everywhere else.
    """
    rejected = [p for p in accepted if p.verdict.overall != "accept"]
    if rejected:
        raise InputError(f"{len(rejected)} pairs are not accepted by verification")

    examples: list[SftExample] = []
    seen: set[tuple[str, str, str]] = set()

    def add(example: SftExample) -> None:
        key = (_norm_question(example.question), normalize_sql(example.sql), example.db_id)
        if key in seen:
            return
        seen.add(key)
        examples.append(example)

    for record in split.records:
        link = link_results.get(record.record_id) if link_results else None
        selection = link.selected if link else None
        schema_text = serialize_schema(graphs[record.db_id], selection=selection)
        question = f"{record.evidence}; {record.question}" if record.evidence else record.question
        add(SftExample(SFT_INSTRUCTION, schema_text, question, record.gold_sql, record.db_id, "original"))

    ordered = sorted(accepted, key=lambda p: (p.db_id, p.kind, p.source_record_id, p.query, p.sql))
    for pair in ordered:
        schema_text = serialize_schema(graphs[pair.db_id])
        add(SftExample(SFT_INSTRUCTION, schema_text, pair.query, pair.sql, pair.db_id, pair.kind))

    lineage = {"originals": sum(1 for e in examples if e.origin == "original")}
    for kind in KINDS:
        lineage[kind] = sum(1 for e in examples if e.origin == kind)
    lineage["total"] = len(examples)
    lineage["iteration"] = iteration
    return SftFile(examples=examples, lineage=lineage)


def write_sft_file(sft: SftFile, path: str | Path) -> int:
    """Emit {instruction, input, output} text triples as JSON Lines."""
    rows = [
        {
            "instruction": ex.instruction,
            "input": f"### Database schema: {ex.schema_text}\n\n### Question: {ex.question}",
            "output": ex.sql,
        }
        for ex in sft.examples
    ]
    return write_artifact(rows, path)
