from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from sqlpipe.errors import InputError
from sqlpipe.sqltext import extract_tables, normalize_sql, syntax_check

# Hand-written queries with their expected base tables; the oracle column
# was produced by reading each statement's FROM/JOIN clauses manually.
TABLE_CASES = [
    ("SELECT a.x FROM t1 a JOIN t2 ON a.id=t2.id", {"t1", "t2"}),
    ("SELECT 1", set()),
    ("SELECT * FROM schools", {"schools"}),
    ("SELECT * FROM schools s WHERE s.city = 'X'", {"schools"}),
    ("SELECT * FROM a, b, c", {"a", "b", "c"}),
    ("SELECT * FROM a AS x, b y", {"a", "b"}),
    ("SELECT * FROM (SELECT * FROM inner_t) sub", {"inner_t"}),
    ("SELECT * FROM (SELECT * FROM inner_t) AS sub, outer_t", {"inner_t", "outer_t"}),
    ("WITH c AS (SELECT * FROM base) SELECT * FROM c", {"base"}),
    ("WITH c AS (SELECT 1) SELECT * FROM c JOIN real_t ON 1=1", {"real_t"}),
    ("WITH a AS (SELECT * FROM x), b AS (SELECT * FROM y) SELECT * FROM a JOIN b ON 1=1", {"x", "y"}),
    ("SELECT * FROM main.schools", {"schools"}),
    ('SELECT * FROM "quoted table"', {"quoted table"}),
    ("SELECT * FROM `tick table`", {"tick table"}),
    ("SELECT * FROM [bracket table]", {"bracket table"}),
    ("SELECT * FROM t1 LEFT OUTER JOIN t2 ON t1.a = t2.a", {"t1", "t2"}),
    ("SELECT * FROM t1 CROSS JOIN t2", {"t1", "t2"}),
    ("SELECT (SELECT max(x) FROM t2) FROM t1", {"t1", "t2"}),
    ("SELECT * FROM t1 WHERE x IN (SELECT y FROM t2 WHERE z = 1)", {"t1", "t2"}),
    (
        "SELECT * FROM frpm INNER JOIN satscores ON satscores.cds = frpm.cdscode WHERE frpm.x > 0.1",
        {"frpm", "satscores"},
    ),
    ("SELECT * FROM t1 UNION SELECT * FROM t2", {"t1", "t2"}),
    ("SELECT count(*) FROM Schools WHERE 1", {"schools"}),
]


@pytest.mark.parametrize("sql,expected", TABLE_CASES)
def test_extract_tables(sql, expected):
    assert set(extract_tables(sql).names) == expected


def test_extract_tables_appendix_query():
    sql = "SELECT movie_title FROM movies WHERE movie_release_year = 1945 ORDER BY movie_popularity DESC"
    assert set(extract_tables(sql).names) == {"movies"}


def test_extract_tables_rejects_unparseable():
    with pytest.raises(InputError):
        extract_tables("SELEC x FROM t")


def test_syntax_check_basic():
    assert syntax_check("SELECT 1").ok
    assert syntax_check("SELECT 1").statement_kind == "select"
    verdict = syntax_check("SELEC 1")
    assert not verdict.ok
    assert "offset" in verdict.error_message


def test_syntax_check_semantic_errors_are_ok():
    # Missing tables/columns are execution problems, not grammar problems.
    assert syntax_check("SELECT * FROM definitely_missing").ok
    assert syntax_check("SELECT nope FROM also_missing WHERE 1=1").ok


def test_syntax_check_statement_kinds():
    assert syntax_check("WITH c AS (SELECT 1) SELECT * FROM c").statement_kind == "select"
    assert syntax_check("VALUES (1, 2)").statement_kind == "select"
    assert syntax_check("CREATE TABLE t (x)").statement_kind == "other"
    assert syntax_check("INSERT INTO t VALUES (1)").statement_kind == "other"


def test_syntax_check_empty_and_incomplete():
    assert not syntax_check("").ok
    assert not syntax_check("   ").ok
    assert not syntax_check("SELECT 1 +").ok


def test_syntax_check_never_executes_slow_queries():
    bomb = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x+1 FROM c) SELECT count(*) FROM c"
    assert syntax_check(bomb).ok  # parses fine; must return quickly


def test_normalize_basic():
    assert normalize_sql("select  1 ;") == "SELECT 1"
    assert normalize_sql("unparseable '") == "unparseable '"


FORMATTING_VARIANTS = [
    ("SELECT school FROM schools WHERE city = 'X'", "select school\n  from schools\twhere city = 'X' ;"),
    ("SELECT count(*) FROM t", "SELECT COUNT(*)  FROM t;"),
    ("SELECT a, b FROM t ORDER BY a", "select a,b from t order by a"),
]


@pytest.mark.parametrize("a,b", FORMATTING_VARIANTS)
def test_normalize_identifies_formatting_variants(a, b):
    assert normalize_sql(a) == normalize_sql(b)


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT 1",
        "SELECT a FROM t WHERE b = 'x y'",
        "SELECT count(*) FROM schools WHERE city = 'San Joaquin'",
        "WITH c AS (SELECT 1 x) SELECT * FROM c",
    ],
)
def test_normalize_preserves_parseability(sql):
    assert syntax_check(normalize_sql(sql)).ok == syntax_check(sql).ok


@pytest.mark.parametrize("sql,expected", [case for case in TABLE_CASES if case[1]])
def test_extract_tables_invariant_under_normalize(sql, expected):
    assert set(extract_tables(normalize_sql(sql)).names) == expected


def test_corpus_golds_reference_known_tables(corpus_split, school_graph, movies_graph):
    known = {
        "school": {t.lower() for t in school_graph.table_names()},
        "movies": {t.lower() for t in movies_graph.table_names()},
    }
    for record in corpus_split.records:
        tables = extract_tables(record.gold_sql).names
        assert tables <= known[record.db_id], record.record_id


@given(st.text(alphabet=" \t\nSELECTFROMabc123*,;'\"()=", max_size=60))
def test_normalize_never_raises(text):
    normalize_sql(text)
