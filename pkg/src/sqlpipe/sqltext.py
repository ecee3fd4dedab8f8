"""SQLite-dialect SQL analysis: syntax checking, table extraction, normalization.

Syntax checking delegates to SQLite's own parser (a throwaway in-memory
connection), which is the grammar the execution harness enforces anyway.
Table extraction and normalization run on a hand-written tokenizer so they
work without executing anything.
"""
from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass, field

from .errors import InputError

# Complete SQLite keyword list; used for normalization casing and to stop
# table-reference scans at clause boundaries.
SQLITE_KEYWORDS = frozenset(
    """
    ABORT ACTION ADD AFTER ALL ALTER ALWAYS ANALYZE AND AS ASC ATTACH
    AUTOINCREMENT BEFORE BEGIN BETWEEN BY CASCADE CASE CAST CHECK COLLATE
    COLUMN COMMIT CONFLICT CONSTRAINT CREATE CROSS CURRENT CURRENT_DATE
    CURRENT_TIME CURRENT_TIMESTAMP DATABASE DEFAULT DEFERRABLE DEFERRED
    DELETE DESC DETACH DISTINCT DO DROP EACH ELSE END ESCAPE EXCEPT
    EXCLUDE EXCLUSIVE EXISTS EXPLAIN FAIL FILTER FIRST FOLLOWING FOR
    FOREIGN FROM FULL GENERATED GLOB GROUP GROUPS HAVING IF IGNORE
    IMMEDIATE IN INDEX INDEXED INITIALLY INNER INSERT INSTEAD INTERSECT
    INTO IS ISNULL JOIN KEY LAST LEFT LIKE LIMIT MATCH MATERIALIZED
    NATURAL NO NOT NOTHING NOTNULL NULL NULLS OF OFFSET ON OR ORDER
    OTHERS OUTER OVER PARTITION PLAN PRAGMA PRECEDING PRIMARY QUERY
    RAISE RANGE RECURSIVE REFERENCES REGEXP REINDEX RELEASE RENAME
    REPLACE RESTRICT RETURNING RIGHT ROLLBACK ROW ROWS SAVEPOINT SELECT
    SET TABLE TEMP TEMPORARY THEN TIES TO TRANSACTION TRIGGER UNBOUNDED
    UNION UNIQUE UPDATE USING VACUUM VALUES VIEW VIRTUAL WHEN WHERE
    WINDOW WITH WITHOUT
    """.split()
)

_SYNTAX_ERROR_MARKERS = (": syntax error", "unrecognized token", "incomplete input")


@dataclass(frozen=True)
class ParseVerdict:
    ok: bool
    error_message: str = ""
    statement_kind: str = "other"  # select | other


@dataclass(frozen=True)
class TableSet:
    """Base table names referenced by a statement, lowercased, alias-free."""

    names: frozenset[str] = field(default_factory=frozenset)


@dataclass(frozen=True)
class Token:
    kind: str  # word | number | string | ident | op | param
    text: str


_TOKEN_RE = re.compile(
    r"""
    (?P<space>\s+)
  | (?P<line_comment>--[^\n]*)
  | (?P<block_comment>/\*.*?\*/)
  | (?P<string>'(?:[^']|'')*')
  | (?P<dquote>"(?:[^"]|"")*")
  | (?P<backtick>`(?:[^`]|``)*`)
  | (?P<bracket>\[[^\]]*\])
  | (?P<number>0[xX][0-9a-fA-F]+|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<word>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<param>\?\d*|[:@$][A-Za-z0-9_$]+)
  | (?P<op><<|>>|<>|<=|>=|==|!=|\|\||->>|->|[-+*/%&|^<>=(),.;~])
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(sql: str) -> list[Token] | None:
    """Lex a statement; returns None if the text cannot be tokenized
    (unterminated string/comment or stray characters)."""
    tokens = []
    pos = 0
    while pos < len(sql):
        m = _TOKEN_RE.match(sql, pos)
        if m is None:
            return None
        pos = m.end()
        kind = m.lastgroup
        if kind in ("space", "line_comment", "block_comment"):
            continue
        text = m.group()
        if kind in ("dquote", "backtick", "bracket"):
            tokens.append(Token("ident", text))
        elif kind == "word":
            tokens.append(Token("word", text))
        else:
            tokens.append(Token(kind, text))
    return tokens


def unquote_identifier(text: str) -> str:
    """Strip SQLite identifier quoting ("x", `x`, [x]) and fold to lowercase."""
    if len(text) >= 2:
        if text[0] == '"' and text[-1] == '"':
            return text[1:-1].replace('""', '"').lower()
        if text[0] == "`" and text[-1] == "`":
            return text[1:-1].replace("``", "`").lower()
        if text[0] == "[" and text[-1] == "]":
            return text[1:-1].lower()
    return text.lower()


def _error_offset(sql: str, message: str) -> int | None:
    m = re.search(r'(?:near|token:) "(.*?)"', message, re.DOTALL)
    if m:
        idx = sql.find(m.group(1))
        if idx >= 0:
            return idx
    if "incomplete input" in message:
        return len(sql)
    return None


def _statement_kind(tokens: list[Token]) -> str:
    i = 0

    def skip_balanced(j: int) -> int:
        depth = 0
        while j < len(tokens):
            if tokens[j].text == "(":
                depth += 1
            elif tokens[j].text == ")":
                depth -= 1
                if depth == 0:
                    return j + 1
            j += 1
        return j

    while i < len(tokens):
        tok = tokens[i]
        word = tok.text.upper() if tok.kind == "word" else ""
        if word in ("EXPLAIN",):
            return "other"
        if word == "WITH":
            # Skip the CTE list: [RECURSIVE] name [(cols)] AS (body) [, ...]
            i += 1
            if i < len(tokens) and tokens[i].text.upper() == "RECURSIVE":
                i += 1
            while i < len(tokens):
                if tokens[i].kind not in ("word", "ident"):
                    break
                i += 1
                if i < len(tokens) and tokens[i].text == "(":
                    i = skip_balanced(i)
                if i < len(tokens) and tokens[i].text.upper() == "AS":
                    i += 1
                if i < len(tokens) and tokens[i].text.upper() == "MATERIALIZED":
                    i += 1
                if i < len(tokens) and tokens[i].text == "(":
                    i = skip_balanced(i)
                if i < len(tokens) and tokens[i].text == ",":
                    i += 1
                    continue
                break
            continue
        if word in ("SELECT", "VALUES"):
            return "select"
        if word:
            return "other"
        if tok.text == "(":
            i += 1  # parenthesized compound select
            continue
        return "other"
    return "other"


def syntax_check(sql: str) -> ParseVerdict:
    """Check a single statement against the SQLite grammar.

    The statement is prepared on an empty in-memory database; execution is
    aborted almost immediately, so only parse outcomes matter. Errors about
    missing tables/columns therefore mean the syntax itself is fine.
    """
    if not sql or not sql.strip():
        return ParseVerdict(ok=False, error_message="empty statement")
    tokens = tokenize(sql)
    kind = _statement_kind(tokens) if tokens else "other"

    conn = sqlite3.connect(":memory:")
    try:
        conn.set_progress_handler(lambda: 1, 50)
        conn.set_authorizer(
            lambda action, *rest: sqlite3.SQLITE_DENY if action == sqlite3.SQLITE_ATTACH else sqlite3.SQLITE_OK
        )
        try:
            conn.execute(sql)
        except sqlite3.ProgrammingError as exc:
            return ParseVerdict(ok=False, error_message=str(exc))
        except sqlite3.Error as exc:
            message = str(exc)
            if any(marker in message for marker in _SYNTAX_ERROR_MARKERS):
                offset = _error_offset(sql, message)
                if offset is not None:
                    message = f"{message} (at offset {offset})"
                return ParseVerdict(ok=False, error_message=message)
            # Prepared fine; the failure (missing table, interrupted, not
            # authorized, ...) happened past the parser.
            return ParseVerdict(ok=True, statement_kind=kind)
        return ParseVerdict(ok=True, statement_kind=kind)
    finally:
        conn.close()


def _collect_cte_names(tokens: list[Token]) -> set[str]:
    names: set[str] = set()

    def skip_balanced(j: int) -> int:
        depth = 0
        while j < len(tokens):
            if tokens[j].text == "(":
                depth += 1
            elif tokens[j].text == ")":
                depth -= 1
                if depth == 0:
                    return j + 1
            j += 1
        return j

    for i, tok in enumerate(tokens):
        if tok.kind != "word" or tok.text.upper() != "WITH":
            continue
        j = i + 1
        if j < len(tokens) and tokens[j].text.upper() == "RECURSIVE":
            j += 1
        while j < len(tokens):
            if tokens[j].kind == "word" and tokens[j].text.upper() in SQLITE_KEYWORDS:
                break
            if tokens[j].kind not in ("word", "ident"):
                break
            name = unquote_identifier(tokens[j].text)
            j += 1
            if j < len(tokens) and tokens[j].text == "(":
                j = skip_balanced(j)
            if j < len(tokens) and tokens[j].text.upper() == "AS":
                names.add(name)
                j += 1
            else:
                break
            if j < len(tokens) and tokens[j].text.upper() == "MATERIALIZED":
                j += 1
            if j < len(tokens) and tokens[j].text == "(":
                j = skip_balanced(j)
            if j < len(tokens) and tokens[j].text == ",":
                j += 1
                continue
            break
    return names


def extract_tables(sql: str) -> TableSet:
    """Base tables named in FROM/JOIN clauses, subqueries and CTE bodies
    included, CTE names excluded. Requires a syntactically valid statement."""
    verdict = syntax_check(sql)
    if not verdict.ok:
        raise InputError(f"cannot extract tables: {verdict.error_message}")
    tokens = tokenize(sql)
    if tokens is None:
        raise InputError("cannot extract tables: unlexable statement")
    cte_names = _collect_cte_names(tokens)
    found: set[str] = set()

    def skip_balanced(j: int) -> int:
        depth = 0
        while j < len(tokens):
            if tokens[j].text == "(":
                depth += 1
            elif tokens[j].text == ")":
                depth -= 1
                if depth == 0:
                    return j + 1
            j += 1
        return j

    def is_name(tok: Token) -> bool:
        return tok.kind == "ident" or (tok.kind == "word" and tok.text.upper() not in SQLITE_KEYWORDS)

    for i, tok in enumerate(tokens):
        if tok.kind != "word" or tok.text.upper() not in ("FROM", "JOIN"):
            continue
        j = i + 1
        # Walk the reference list that follows; nested subqueries are not
        # descended into here because the outer scan visits their tokens too.
        while j < len(tokens):
            if tokens[j].text == "(":
                j = skip_balanced(j)
            elif is_name(tokens[j]):
                name = unquote_identifier(tokens[j].text)
                j += 1
                if j < len(tokens) and tokens[j].text == ".":  # schema.table
                    if j + 1 < len(tokens) and is_name(tokens[j + 1]):
                        name = unquote_identifier(tokens[j + 1].text)
                        j += 2
                if j < len(tokens) and tokens[j].text == "(":
                    j = skip_balanced(j)  # table-valued function, not a table
                elif name not in cte_names:
                    found.add(name)
            else:
                break
            # Optional [AS] alias, then a comma continues the reference list.
            if j < len(tokens) and tokens[j].kind == "word" and tokens[j].text.upper() == "AS":
                j += 1
            if j < len(tokens) and is_name(tokens[j]):
                j += 1
            if j < len(tokens) and tokens[j].text == ",":
                j += 1
                continue
            break
    return TableSet(names=frozenset(found))


def normalize_sql(sql: str) -> str:
    """Canonicalize formatting: collapse whitespace, uppercase keywords,
    strip trailing semicolons. Unlexable input is whitespace-collapsed only."""
    tokens = tokenize(sql)
    if tokens is None:
        return " ".join(sql.split())
    while tokens and tokens[-1].text == ";":
        tokens = tokens[:-1]
    parts = []
    for tok in tokens:
        if tok.kind == "word" and tok.text.upper() in SQLITE_KEYWORDS:
            parts.append(tok.text.upper())
        else:
            parts.append(tok.text)
    return " ".join(parts)
