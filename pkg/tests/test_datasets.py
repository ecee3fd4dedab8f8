from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from sqlpipe.datasets import (
    CandidateRow,
    PredictionFile,
    QuestionArtifact,
    QuestionRecord,
    join_predictions,
    load_dataset,
    read_artifact,
    write_artifact,
)
from sqlpipe.errors import CoverageError, DatasetParseError, DatasetSchemaError, SerializationError


def test_load_bird_corpus(corpus_file, corpus_split):
    raw = json.loads(corpus_file.read_text(encoding="utf-8"))
    assert len(corpus_split.records) == len(raw) == 20
    first = corpus_split.records[0]
    assert first.record_id == "corpus:0"
    assert first.db_id == "school"
    assert first.difficulty == "simple"
    assert corpus_split.records[10].evidence.startswith("released in the year 1945")


def test_load_spider_format(tmp_path):
    path = tmp_path / "spider_dev.json"
    path.write_text(json.dumps([{"question": "q1", "db_id": "school", "query": "SELECT 1"}]), encoding="utf-8")
    split = load_dataset(path, "spider")
    assert split.records[0].gold_sql == "SELECT 1"
    assert split.records[0].evidence == ""
    assert split.records[0].difficulty == "unknown"


def test_load_empty_array(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("[]", encoding="utf-8")
    assert load_dataset(path, "bird").records == []


def test_malformed_json_reports_offset(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('[{"question": "a", }]', encoding="utf-8")
    with pytest.raises(DatasetParseError) as exc:
        load_dataset(path, "bird")
    assert exc.value.offset > 0


def test_missing_required_key_reports_index(tmp_path):
    records = [
        {"question": "a", "db_id": "school", "SQL": "SELECT 1"},
        {"db_id": "school", "SQL": "SELECT 1"},
        {"question": "c", "db_id": "school", "SQL": "SELECT 1"},
    ]
    path = tmp_path / "three.json"
    path.write_text(json.dumps(records), encoding="utf-8")
    with pytest.raises(DatasetSchemaError) as exc:
        load_dataset(path, "bird")
    # Independent walk: the first offending index per a plain scan.
    expected = next(i for i, r in enumerate(records) if "question" not in r)
    assert exc.value.index == expected == 1
    assert exc.value.missing_key == "question"


def test_load_is_deterministic(corpus_file):
    a = load_dataset(corpus_file, "bird")
    b = load_dataset(corpus_file, "bird")
    assert a == b


def test_join_predictions_order_and_coverage(corpus_split, gold_predictions):
    pairs = join_predictions(corpus_split, gold_predictions)
    assert len(pairs) == len(corpus_split.records)
    assert [r.record_id for r, _ in pairs] == corpus_split.record_ids()

    missing = PredictionFile(entries=dict(list(gold_predictions.entries.items())[:-1]))
    with pytest.raises(CoverageError) as exc:
        join_predictions(corpus_split, missing)
    assert exc.value.missing_ids == ["corpus:19"]


def test_join_predictions_ignores_extras(corpus_split, gold_predictions, caplog):
    extras = PredictionFile(entries={**gold_predictions.entries, "corpus:999": "SELECT 1"})
    with caplog.at_level("WARNING"):
        pairs = join_predictions(corpus_split, extras)
    assert len(pairs) == len(corpus_split.records)
    assert "corpus:999" in caplog.text


def test_write_artifact_roundtrip(tmp_path):
    rows = [CandidateRow(record_id=f"r:{i}", sql=f"SELECT {i}", model_handle="m") for i in range(5)]
    path = tmp_path / "rows.jsonl"
    assert write_artifact(rows, path) == 5
    assert read_artifact(path) == rows


def test_write_artifact_empty(tmp_path):
    path = tmp_path / "empty.jsonl"
    assert write_artifact([], path) == 0
    assert path.read_text() == ""
    assert read_artifact(path) == []


def test_write_artifact_names_bad_field(tmp_path):
    with pytest.raises(SerializationError) as exc:
        write_artifact([{"kind": "x", "payload": object()}], tmp_path / "bad.jsonl")
    assert exc.value.field == "payload"


records_strategy = st.builds(
    QuestionRecord,
    record_id=st.text(min_size=1, max_size=8),
    question=st.text(max_size=30),
    evidence=st.text(max_size=20),
    db_id=st.sampled_from(["school", "movies"]),
    gold_sql=st.text(max_size=30),
    difficulty=st.sampled_from(["simple", "moderate", "challenging", "unknown"]),
)


@given(st.lists(records_strategy, max_size=8))
def test_artifact_roundtrip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("rt") / "records.jsonl"
    items = [QuestionArtifact(record=r) for r in records]
    write_artifact(items, path)
    assert read_artifact(path) == items
