from __future__ import annotations

import json
import re
import sqlite3

import pytest

from sqlpipe.catalog import (
    build_value_index,
    introspect,
    render_matched_block,
    serialize_schema,
    tokenize_text,
)
from sqlpipe.errors import CatalogError, SelectionError


def test_introspect_school(school_db, school_graph):
    assert school_graph.db_id == "school"
    assert [t.name for t in school_graph.tables] == ["schools"]
    table = school_graph.tables[0]
    assert table.column_names() == ["cdscode", "school", "city", "statustype"]
    assert table.primary_key == ("cdscode",)
    # Samples come from the first two rows in storage order.
    with sqlite3.connect(school_db) as conn:
        first_two = conn.execute("SELECT school FROM schools LIMIT 2").fetchall()
    expected = tuple(r[0] for r in first_two)
    assert table.columns[1].sample_values == expected
    # No sidecar: comments default to the column name.
    assert table.columns[2].comment == "city"


def test_introspect_foreign_keys(library_db):
    graph = introspect(library_db)
    edges = [fk.render() for fk in graph.foreign_keys]
    assert edges == ["books.author_id = authors.author_id"]


def test_introspect_empty_db(tmp_path):
    path = tmp_path / "empty.sqlite"
    sqlite3.connect(path).close()
    assert introspect(path).tables == ()


def test_introspect_missing_file(tmp_path):
    with pytest.raises(CatalogError):
        introspect(tmp_path / "nope.sqlite")


def test_comments_sidecar(tmp_path):
    path = tmp_path / "side.sqlite"
    conn = sqlite3.connect(path)
    conn.execute('CREATE TABLE t ("mailstrabr" TEXT)')
    conn.commit()
    conn.close()
    (tmp_path / "side.comments.json").write_text(
        json.dumps({"t": {"mailstrabr": "mailing street address"}}), encoding="utf-8"
    )
    graph = introspect(path)
    assert graph.tables[0].columns[0].comment == "mailing street address"


def test_serialize_schema_shape(movies_graph):
    text = serialize_schema(movies_graph)
    assert text.startswith("CREATE TABLE movies (")
    assert '"movie_release_year" INTEGER COMMENT movie_release_year; VALUES: [2007,2006],' in text
    assert '"movie_title" TEXT COMMENT movie_title; VALUES: [La Antena,Elementary Particles],' in text
    assert 'PRIMARY KEY ("movie_id")' in text
    assert text.endswith("Foreign_key: []")
    # Last column line carries no trailing comma.
    lines = text.splitlines()
    closing = lines.index('PRIMARY KEY ("movie_id")')
    assert not lines[closing - 1].endswith(",")


LINE_SHAPES = [
    re.compile(r"^CREATE TABLE \S+ \($"),
    re.compile(r'^"[^"]+" [A-Z ]* ?COMMENT .*; VALUES: \[.*\],?$'),
    re.compile(r'^PRIMARY KEY \(".*"\)$'),
    re.compile(r"^\)$"),
    re.compile(r"^Foreign_key: \[.*\]$"),
    re.compile(r"^$"),
]


def test_serialize_schema_line_shapes(school_graph, movies_graph, library_db):
    graphs = [school_graph, movies_graph, introspect(library_db)]
    for graph in graphs:
        for line in serialize_schema(graph).splitlines():
            assert any(shape.match(line) for shape in LINE_SHAPES), line


def test_serialize_schema_pure(school_graph):
    assert serialize_schema(school_graph) == serialize_schema(school_graph)


def test_serialize_schema_selection_subset(library_db):
    graph = introspect(library_db)
    text = serialize_schema(graph, selection={"books": ["title"]})
    assert text.count("CREATE TABLE") == 1
    assert '"title"' in text and '"author_id"' not in text
    # FK line only keeps edges inside the selection.
    assert "Foreign_key: []" in text


def test_serialize_schema_golden_no_fk(school_graph):
    expected = "\n".join(
        [
            "CREATE TABLE schools (",
            '"cdscode" TEXT COMMENT cdscode; VALUES: [01100170000000,02100170000000],',
            '"school" TEXT COMMENT school; VALUES: [Alameda High,Joaquin Elementary],',
            '"city" TEXT COMMENT city; VALUES: [Alameda,San Joaquin],',
            '"statustype" TEXT COMMENT statustype; VALUES: [Active]',
            'PRIMARY KEY ("cdscode")',
            ")",
            "Foreign_key: []",
        ]
    )
    assert serialize_schema(school_graph) == expected


def test_serialize_schema_unknown_selection(school_graph):
    with pytest.raises(SelectionError):
        serialize_schema(school_graph, selection={"nope": []})
    with pytest.raises(SelectionError):
        serialize_schema(school_graph, selection={"schools": ["nope"]})


def test_render_matched_block_groups_by_column():
    matched = [
        ("method", "summary", "Descending order"),
        ("method", "summary", "Descending Order"),
        ("actor", "actorid", "1945"),
    ]
    block = render_matched_block(matched)
    assert block.splitlines() == [
        "method.summary ( Descending order , Descending Order )",
        "actor.actorid ( 1945 )",
    ]


def test_value_index_tokens(school_index):
    hits = {(school_index.cells[i].table, school_index.cells[i].column) for i in school_index.postings["san"]}
    assert ("schools", "city") in hits
    hits_j = {(school_index.cells[i].table, school_index.cells[i].column) for i in school_index.postings["joaquin"]}
    assert ("schools", "city") in hits_j and ("schools", "school") in hits_j


def test_value_index_numeric_cells_in_two_columns(library_db):
    graph = introspect(library_db)
    index = build_value_index(library_db, graph)
    hits = {(c.table, c.column) for i in index.postings["1945"] for c in [index.cells[i]]}
    assert ("authors", "author_id") in hits and ("books", "author_id") in hits


def test_value_index_empty_table(tmp_path):
    path = tmp_path / "void.sqlite"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE t (x TEXT)")
    conn.commit()
    conn.close()
    graph = introspect(path)
    index = build_value_index(path, graph)
    assert index.cells == []


def test_index_completeness(school_db, school_graph, school_index):
    # Every token of every indexed text cell retrieves that cell.
    with sqlite3.connect(school_db) as conn:
        rows = conn.execute("SELECT cdscode, school, city, statustype FROM schools").fetchall()
    for row in rows:
        for col, value in zip(("cdscode", "school", "city", "statustype"), row):
            for token in tokenize_text(str(value)):
                cells = [school_index.cells[i] for i in school_index.postings[token]]
                assert any(c.column == col and c.value == str(value) for c in cells)
