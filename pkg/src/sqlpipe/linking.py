"""Four-step schema linking: value match, first filter, keywords, second filter.

The first filter scores tables and columns with a pluggable relevance
scorer; the default is a deterministic lexical BM25 over schema metadata, and
a remote HTTP scorer can be registered instead. The two judge-driven steps go
through the gateway and can only shrink the selection, never grow it.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Protocol

import requests

from .catalog import SchemaGraph, ValueIndex, bm25_score, render_matched_block, serialize_schema, tokenize_text
from .datasets import ModelHandle, dataclass_from_dict, register_artifact
from .errors import FilterError, InputError, KeywordExtractionError, VerdictParseError
from .gateway import CallParams, JudgeGateway

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinkConfig:
    top_n_tables: int = 6
    top_n_columns_per_table: int = 10
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    min_substring_len: int = 4
    max_matched_values: int = 20

    def __post_init__(self):
        if self.top_n_tables < 1 or self.top_n_columns_per_table < 1 or self.max_matched_values < 1:
            raise InputError("link counts must be >= 1")
        if self.bm25_k1 <= 0 or not (0.0 <= self.bm25_b <= 1.0):
            raise InputError("bm25 parameters out of range")
        if self.min_substring_len < 1:
            raise InputError("min_substring_len must be >= 1")


@dataclass(frozen=True)
class MatchedValue:
    table: str
    column: str
    value: str
    score: float


@register_artifact("link_result")
@dataclass
class LinkResult:
    record_id: str
    selected: dict[str, list[str]]
    matched_values: list[MatchedValue]
    keywords: list[str]
    stage_trace: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "LinkResult":
        obj = dict(obj)
        obj["matched_values"] = [MatchedValue(**m) for m in obj.get("matched_values", [])]
        return dataclass_from_dict(cls, obj)


def longest_common_substring_len(a: str, b: str) -> int:
    """Classic DP, case-insensitive."""
    a = a.lower()
    b = b.lower()
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    best = 0
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best:
                    best = cur[j]
        prev = cur
    return best


def value_match(question: str, index: ValueIndex, cfg: LinkConfig | None = None) -> list[MatchedValue]:
    """Cells lexically related to the question.

    The candidate set is the union of BM25 hits (positive score against the
    question tokens) and cells sharing a long-enough common substring with
    the question; the reported score is always the BM25 score. Sorted by
    score descending, ties by (table, column, value), then truncated.
    """
    cfg = cfg or LinkConfig()
    if not question.strip():
        return []
    query_tokens = tokenize_text(question)
    candidates: set[int] = set()
    scores: dict[int, float] = {}
    for token in set(query_tokens):
        for idx in index.postings.get(token, ()):
            candidates.add(idx)
    for idx in candidates:
        scores[idx] = bm25_score(index, query_tokens, idx, cfg.bm25_k1, cfg.bm25_b)
    for idx, cell in enumerate(index.cells):
        if idx in candidates:
            continue
        if longest_common_substring_len(question, cell.value) >= cfg.min_substring_len:
            candidates.add(idx)
            scores[idx] = bm25_score(index, query_tokens, idx, cfg.bm25_k1, cfg.bm25_b)
    ordered = sorted(
        candidates,
        key=lambda i: (-scores[i], index.cells[i].table, index.cells[i].column, index.cells[i].value),
    )
    return [
        MatchedValue(
            table=index.cells[i].table,
            column=index.cells[i].column,
            value=index.cells[i].value,
            score=scores[i],
        )
        for i in ordered[: cfg.max_matched_values]
    ]


class RelevanceScorer(Protocol):
    def score(self, question: str, graph: SchemaGraph) -> dict[str, dict[str, float]]:
        """Per-table, per-column relevance scores; higher is more relevant."""
        ...


class LexicalScorer:
    """BM25 over column name + comment + table name tokens, per column."""

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b

    def score(self, question: str, graph: SchemaGraph) -> dict[str, dict[str, float]]:
        docs = []
        keys = []
        for table in graph.tables:
            for col in table.columns:
                tokens = tokenize_text(col.name) + tokenize_text(col.comment) + tokenize_text(table.name)
                docs.append(tokens)
                keys.append((table.name, col.name))
        n_docs = len(docs)
        if n_docs == 0:
            return {}
        avg_len = sum(len(d) for d in docs) / n_docs
        doc_freq: dict[str, int] = {}
        for doc in docs:
            for token in set(doc):
                doc_freq[token] = doc_freq.get(token, 0) + 1
        query_tokens = tokenize_text(question)
        result: dict[str, dict[str, float]] = {}
        for (table, column), doc in zip(keys, docs):
            score = 0.0
            for token in query_tokens:
                df = doc_freq.get(token)
                tf = doc.count(token)
                if not df or not tf:
                    continue
                idf = math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
                denom = tf + self.k1 * (1.0 - self.b + self.b * len(doc) / avg_len) if avg_len else tf
                score += idf * tf * (self.k1 + 1.0) / denom
            result.setdefault(table, {})[column] = score
        return result


class HttpScorer:
    """Remote classifier behind the same scorer contract.

    POSTs {question, db_id, tables: {table: [columns]}} and expects
    {table: {column: score}} back.
    """

    def __init__(self, url: str, timeout_s: float = 60.0, session: requests.Session | None = None):
        self.url = url
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def score(self, question: str, graph: SchemaGraph) -> dict[str, dict[str, float]]:
        payload = {
            "question": question,
            "db_id": graph.db_id,
            "tables": {t.name: t.column_names() for t in graph.tables},
        }
        try:
            resp = self.session.post(self.url, json=payload, timeout=self.timeout_s)
            resp.raise_for_status()
            raw = resp.json()
            return {str(t): {str(c): float(s) for c, s in cols.items()} for t, cols in raw.items()}
        except (requests.RequestException, ValueError, AttributeError) as exc:
            raise FilterError(f"remote scorer failed: {exc}") from exc


def _protected_columns(graph: SchemaGraph, table: str) -> set[str]:
    """Primary-key and foreign-key columns survive the first filter."""
    tdef = graph.table(table)
    protected = {c.lower() for c in tdef.primary_key}
    for fk in graph.foreign_keys:
        if fk.table.lower() == table.lower():
            protected.add(fk.column.lower())
        if fk.ref_table.lower() == table.lower():
            protected.add(fk.ref_column.lower())
    return protected


def first_filter(
    question: str,
    graph: SchemaGraph,
    scorer: RelevanceScorer | None = None,
    cfg: LinkConfig | None = None,
) -> dict[str, list[str]]:
    """Keep the top-N tables and top-M columns per table by scorer ranking.

    Key columns (primary/foreign) of kept tables are always retained, and
    ties break lexicographically for reproducibility.
    """
    cfg = cfg or LinkConfig()
    scorer = scorer or LexicalScorer(k1=cfg.bm25_k1, b=cfg.bm25_b)
    try:
        scores = scorer.score(question, graph)
    except FilterError:
        raise
    except Exception as exc:  # scorer plug-ins are external code
        raise FilterError(f"scorer failed: {exc}") from exc

    table_rank = []
    for table in graph.tables:
        col_scores = scores.get(table.name, {})
        best = max(col_scores.values(), default=0.0)
        table_rank.append((-best, table.name.lower(), table.name))
    table_rank.sort()
    kept_tables = [name for _, _, name in table_rank[: cfg.top_n_tables]]

    selection: dict[str, list[str]] = {}
    for name in kept_tables:
        tdef = graph.table(name)
        col_scores = scores.get(name, {})
        ranked = sorted(tdef.column_names(), key=lambda c: (-col_scores.get(c, 0.0), c.lower()))
        kept = ranked[: cfg.top_n_columns_per_table]
        kept_set = {c.lower() for c in kept}
        for col in tdef.column_names():
            if col.lower() in _protected_columns(graph, name) and col.lower() not in kept_set:
                kept.append(col)
                kept_set.add(col.lower())
        # Preserve schema column order in the output.
        order = {c.lower(): i for i, c in enumerate(tdef.column_names())}
        selection[name] = sorted(kept, key=lambda c: order[c.lower()])
    # Preserve schema table order.
    table_order = {t.lower(): i for i, t in enumerate(graph.table_names())}
    return {t: selection[t] for t in sorted(selection, key=lambda t: table_order[t.lower()])}


def extract_keywords(
    question: str,
    evidence: str,
    judge: ModelHandle,
    gateway: JudgeGateway,
    max_reasks: int = 2,
) -> list[str]:
    """Ask the judge for the question's keywords; distinct, order-preserving."""
    if not question.strip():
        raise InputError("empty question")
    try:
        verdict = gateway.ask(
            judge,
            "keyword_extract",
            {"question": question, "evidence": evidence},
            kind="free_text",
            params=CallParams(),
            max_reasks=max_reasks,
        )
    except VerdictParseError as exc:  # free_text never raises, but keep the gate uniform
        raise KeywordExtractionError(str(exc)) from exc
    parts = [p.strip() for chunk in verdict.raw.splitlines() for p in chunk.split(",")]
    keywords = []
    seen = set()
    for part in parts:
        if part and part.lower() not in seen:
            seen.add(part.lower())
            keywords.append(part)
    if not keywords:
        raise KeywordExtractionError("judge returned no keywords")
    return keywords


_SELECTION_LINE = re.compile(r"^\s*[-*]?\s*([^:]+?)\s*:\s*(.*)$")


def parse_selection_response(text: str) -> dict[str, list[str]]:
    """Parse ``table: col1, col2`` lines from a judge response."""
    selection: dict[str, list[str]] = {}
    for line in text.splitlines():
        m = _SELECTION_LINE.match(line)
        if not m:
            continue
        table = m.group(1).strip().strip("`\"'")
        cols = [c.strip().strip("`\"'") for c in m.group(2).split(",") if c.strip()]
        if table:
            selection[table] = cols
    return selection


def second_filter(
    first_pass: dict[str, list[str]],
    keywords: list[str],
    matched: list[MatchedValue],
    judge: ModelHandle,
    gateway: JudgeGateway,
    graph: SchemaGraph,
    question: str = "",
    record_id: str = "",
    max_reasks: int = 2,
) -> LinkResult:
    """Judge-refined selection; the judge may only shrink the first pass.

    Unknown tables or columns in the judge output are dropped with a warning.
    An output with no usable entry falls back to the first pass so linking
    never returns an empty schema.
    """
    if not first_pass:
        raise InputError("first_pass selection is empty")
    schema_text = serialize_schema(graph, selection=first_pass)
    bindings = {
        "question": question,
        "keywords": ", ".join(keywords),
        "table_info": schema_text,
        "match_value": render_matched_block([(m.table, m.column, m.value) for m in matched]),
    }
    verdict = gateway.ask(judge, "second_filter", bindings, kind="free_text", max_reasks=max_reasks)
    proposed = parse_selection_response(verdict.raw)

    first_lower = {t.lower(): [c.lower() for c in cols] for t, cols in first_pass.items()}
    canonical = {t.lower(): t for t in first_pass}
    selected: dict[str, list[str]] = {}
    for table, cols in proposed.items():
        if table.lower() not in first_lower:
            logger.warning("second filter proposed unknown table %r; dropped", table)
            continue
        allowed = first_lower[table.lower()]
        kept = [c for c in cols if c.lower() in allowed]
        unknown = [c for c in cols if c.lower() not in allowed]
        if unknown:
            logger.warning("second filter proposed unknown columns %r for %s; dropped", unknown, table)
        if kept:
            orig = first_pass[canonical[table.lower()]]
            order = {c.lower(): i for i, c in enumerate(orig)}
            names = {c.lower(): c for c in orig}
            selected[canonical[table.lower()]] = sorted(
                {names[c.lower()] for c in kept}, key=lambda c: order[c.lower()]
            )
    fallback = False
    if not selected:
        selected = {t: list(cols) for t, cols in first_pass.items()}
        fallback = True
        logger.warning("second filter returned no usable selection; keeping first pass")

    trace = {
        "first_filter": {"selected": {t: list(c) for t, c in first_pass.items()}},
        "extract_keywords": {"keywords": list(keywords)},
        "second_filter": {"raw": verdict.raw, "fallback": fallback},
        "value_match": {"count": len(matched)},
    }
    return LinkResult(
        record_id=record_id,
        selected=selected,
        matched_values=list(matched),
        keywords=list(keywords),
        stage_trace=trace,
    )


def link_record(
    record_id: str,
    question: str,
    evidence: str,
    graph: SchemaGraph,
    index: ValueIndex,
    judge: ModelHandle,
    gateway: JudgeGateway,
    scorer: RelevanceScorer | None = None,
    cfg: LinkConfig | None = None,
) -> LinkResult:
    """Run all four linking steps for one record."""
    cfg = cfg or LinkConfig()
    matched = value_match(question, index, cfg)
    first_pass = first_filter(question, graph, scorer, cfg)
    try:
        keywords = extract_keywords(question, evidence, judge, gateway)
    except KeywordExtractionError:
        keywords = tokenize_text(question)
        logger.warning("keyword extraction failed for %s; falling back to question tokens", record_id)
    result = second_filter(
        first_pass, keywords, matched, judge, gateway, graph, question=question, record_id=record_id
    )
    result.stage_trace["value_match"]["matched"] = [
        {"table": m.table, "column": m.column, "value": m.value, "score": m.score} for m in matched
    ]
    return result
