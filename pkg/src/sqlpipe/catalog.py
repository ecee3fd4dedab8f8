"""SQLite schema introspection, prompt-text serialization, and the cell-value index."""
from __future__ import annotations

import json
import math
import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CatalogError, SelectionError

# Cells longer than this never enter the value index; ranking long free text
# by lexical overlap produces noise matches.
MAX_INDEXED_CELL_LEN = 64

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class ColumnDef:
    name: str
    declared_type: str
    comment: str
    sample_values: tuple = ()


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: tuple[str, ...] = ()

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass(frozen=True)
class ForeignKey:
    table: str
    column: str
    ref_table: str
    ref_column: str

    def render(self) -> str:
        return f"{self.table}.{self.column} = {self.ref_table}.{self.ref_column}"


@dataclass(frozen=True)
class SchemaGraph:
    db_id: str
    tables: tuple[TableDef, ...]
    foreign_keys: tuple[ForeignKey, ...] = ()

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name.lower() == name.lower():
                return t
        raise KeyError(name)

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]


@dataclass(frozen=True)
class IndexedCell:
    """One distinct (table, column, value) cell treated as a BM25 document."""

    table: str
    column: str
    value: str
    tokens: tuple[str, ...]


@dataclass
class ValueIndex:
    db_id: str
    cells: list[IndexedCell]
    postings: dict[str, list[int]]  # token -> indices into cells
    doc_freq: dict[str, int]
    avg_doc_len: float


def tokenize_text(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics; used for cells and questions."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def canonical_cell_text(value) -> str | None:
    """Render a cell for indexing: text as-is, numerics as their canonical
    decimal string, NULL/blob excluded."""
    if value is None or isinstance(value, bytes):
        return None
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() else str(value)
    return str(value)


def _load_comments(db_file: Path, db_id: str) -> dict[str, dict[str, str]]:
    sidecar = db_file.with_name(f"{db_id}.comments.json")
    if sidecar.exists():
        try:
            raw = json.loads(sidecar.read_text(encoding="utf-8"))
            return {str(t).lower(): {str(c).lower(): str(v) for c, v in cols.items()} for t, cols in raw.items()}
        except (json.JSONDecodeError, AttributeError) as exc:
            raise CatalogError(f"invalid comments sidecar {sidecar}: {exc}") from exc
    return {}


def introspect(db_file: str | Path) -> SchemaGraph:
    """Build a SchemaGraph from a SQLite file.

    Sample values are the distinct non-empty cells of the first two rows in
    storage order, at most two per column. Column comments come from an
    optional ``<db_id>.comments.json`` sidecar, defaulting to the column name.
    """
    db_file = Path(db_file)
    db_id = db_file.stem
    if not db_file.exists():
        raise CatalogError(f"database file not found: {db_file}")
    try:
        conn = sqlite3.connect(f"file:{db_file}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise CatalogError(f"cannot open {db_file}: {exc}") from exc

    comments = _load_comments(db_file, db_id)
    try:
        try:
            names = [
                row[0]
                for row in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%'"
                )
            ]
        except sqlite3.DatabaseError as exc:
            raise CatalogError(f"cannot read {db_file}: {exc}") from exc

        tables = []
        edges = []
        for name in names:
            info = conn.execute(f'PRAGMA table_info("{name}")').fetchall()
            col_names = [row[1] for row in info]
            quoted = ", ".join(f'"{c}"' for c in col_names)
            sample_rows = conn.execute(f'SELECT {quoted} FROM "{name}" LIMIT 2').fetchall() if col_names else []
            columns = []
            for idx, row in enumerate(info):
                col_name, declared = row[1], (row[2] or "").upper()
                seen: list[str] = []
                for sample in sample_rows:
                    text = canonical_cell_text(sample[idx])
                    if text and text not in seen:
                        seen.append(text)
                comment = comments.get(name.lower(), {}).get(col_name.lower(), col_name)
                columns.append(
                    ColumnDef(
                        name=col_name,
                        declared_type=declared,
                        comment=comment,
                        sample_values=tuple(seen[:2]),
                    )
                )
            pk = tuple(row[1] for row in sorted((r for r in info if r[5] > 0), key=lambda r: r[5]))
            tables.append(TableDef(name=name, columns=tuple(columns), primary_key=pk))
            for fk in conn.execute(f'PRAGMA foreign_key_list("{name}")'):
                # fk: (id, seq, ref_table, from, to, ...); "to" may be NULL
                # when the reference targets the primary key implicitly.
                ref_col = fk[4]
                if ref_col is None:
                    ref_info = conn.execute(f'PRAGMA table_info("{fk[2]}")').fetchall()
                    ref_pk = [r[1] for r in ref_info if r[5] > 0]
                    ref_col = ref_pk[0] if ref_pk else ""
                edges.append(ForeignKey(table=name, column=fk[3], ref_table=fk[2], ref_column=ref_col))
        return SchemaGraph(db_id=db_id, tables=tuple(tables), foreign_keys=tuple(edges))
    finally:
        conn.close()


def _validate_selection(graph: SchemaGraph, selection: dict[str, list[str]]) -> None:
    known = {t.name.lower(): {c.lower() for c in t.column_names()} for t in graph.tables}
    for table, cols in selection.items():
        if table.lower() not in known:
            raise SelectionError(f"unknown table in selection: {table}")
        for col in cols:
            if col.lower() not in known[table.lower()]:
                raise SelectionError(f"unknown column in selection: {table}.{col}")


def render_matched_block(matched: list) -> str:
    """Render matched cell values, one ``table.column ( v1 , v2 )`` line per
    column, preserving the incoming (score-sorted) order."""
    grouped: dict[tuple[str, str], list[str]] = {}
    order: list[tuple[str, str]] = []
    for entry in matched:
        table, column, value = entry[0], entry[1], entry[2]
        key = (table, column)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        if value not in grouped[key]:
            grouped[key].append(value)
    lines = [f"{t}.{c} ( {' , '.join(vals)} )" for (t, c), vals in ((k, grouped[k]) for k in order)]
    return "\n".join(lines)


def serialize_schema(
    graph: SchemaGraph,
    selection: dict[str, list[str]] | None = None,
    matched: list | None = None,
) -> str:
    """Serialize a schema (optionally pruned to a selection) into the fixed
    prompt text format, bit-for-bit stable for identical inputs.

    Per table::

        CREATE TABLE t (
        "col" TYPE COMMENT comment; VALUES: [v1,v2],
        ...last column without trailing comma
        PRIMARY KEY ("pk")
        )

    followed by one ``Foreign_key: [...]`` line, and, when ``matched`` is
    given, a ``### Match value:matched contents:`` block.
    """
    if selection is not None:
        _validate_selection(graph, selection)
        selected = {t.lower(): [c.lower() for c in cols] for t, cols in selection.items()}
    else:
        selected = None

    blocks = []
    kept_tables = []
    for table in graph.tables:
        if selected is not None and table.name.lower() not in selected:
            continue
        kept_tables.append(table.name.lower())
        # An empty column list in the selection means "all columns".
        wanted = selected.get(table.name.lower()) if selected is not None else None
        columns = [c for c in table.columns if not wanted or c.name.lower() in wanted]
        lines = [f"CREATE TABLE {table.name} ("]
        for i, col in enumerate(columns):
            values = ",".join(col.sample_values)
            comma = "," if i < len(columns) - 1 else ""
            lines.append(f'"{col.name}" {col.declared_type} COMMENT {col.comment}; VALUES: [{values}]{comma}')
        lines.append(f'PRIMARY KEY ("{", ".join(table.primary_key)}")')
        lines.append(")")
        blocks.append("\n".join(lines))

    fks = [
        fk.render()
        for fk in graph.foreign_keys
        if selected is None or (fk.table.lower() in kept_tables and fk.ref_table.lower() in kept_tables)
    ]
    text = "\n\n".join(blocks)
    text += ("\n" if blocks else "") + f"Foreign_key: [{', '.join(fks)}]"
    if matched is not None:
        text += "\n\n### Match value:matched contents:\n" + render_matched_block(matched)
    return text


def build_value_index(db_file: str | Path, graph: SchemaGraph) -> ValueIndex:
    """Index every usable cell of the database as a BM25 document.

    Documents are distinct (table, column, value) triples; text cells are
    tokenized, numeric cells indexed as their canonical decimal string.
    """
    db_file = Path(db_file)
    try:
        conn = sqlite3.connect(f"file:{db_file}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise CatalogError(f"cannot open {db_file}: {exc}") from exc

    seen: set[tuple[str, str, str]] = set()
    cells: list[IndexedCell] = []
    try:
        for table in graph.tables:
            if not table.columns:
                continue
            quoted = ", ".join(f'"{c.name}"' for c in table.columns)
            for row in conn.execute(f'SELECT {quoted} FROM "{table.name}"'):
                for col, value in zip(table.columns, row):
                    text = canonical_cell_text(value)
                    if text is None or not text or len(text) > MAX_INDEXED_CELL_LEN:
                        continue
                    key = (table.name, col.name, text)
                    if key in seen:
                        continue
                    seen.add(key)
                    tokens = tuple(tokenize_text(text))
                    if tokens:
                        cells.append(IndexedCell(table=table.name, column=col.name, value=text, tokens=tokens))
    finally:
        conn.close()

    cells.sort(key=lambda c: (c.table, c.column, c.value))
    postings: dict[str, list[int]] = {}
    doc_freq: dict[str, int] = {}
    for idx, cell in enumerate(cells):
        for token in set(cell.tokens):
            postings.setdefault(token, []).append(idx)
            doc_freq[token] = doc_freq.get(token, 0) + 1
    avg_len = sum(len(c.tokens) for c in cells) / len(cells) if cells else 0.0
    return ValueIndex(db_id=graph.db_id, cells=cells, postings=postings, doc_freq=doc_freq, avg_doc_len=avg_len)


def bm25_score(index: ValueIndex, query_tokens: list[str], cell_idx: int, k1: float, b: float) -> float:
    """Okapi BM25 with the +1-smoothed idf, scored per indexed cell."""
    cell = index.cells[cell_idx]
    n_docs = len(index.cells)
    if n_docs == 0:
        return 0.0
    doc_len = len(cell.tokens)
    score = 0.0
    for token in query_tokens:
        df = index.doc_freq.get(token)
        if not df:
            continue
        tf = cell.tokens.count(token)
        if tf == 0:
            continue
        idf = math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
        denom = tf + k1 * (1.0 - b + b * doc_len / index.avg_doc_len)
        score += idf * tf * (k1 + 1.0) / denom
    return score
