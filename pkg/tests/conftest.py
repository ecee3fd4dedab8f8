from __future__ import annotations

import json
import sqlite3
from pathlib import Path

import pytest

from sqlpipe.catalog import build_value_index, introspect
from sqlpipe.datasets import ModelHandle, PredictionFile, load_dataset
from sqlpipe.gateway import CallableBackend, JudgeGateway

from _rules import RuleJudge

SCHOOL_ROWS = [
    ("01100170000000", "Alameda High", "Alameda", "Active"),
    ("02100170000000", "Joaquin Elementary", "San Joaquin", "Active"),
    ("03100170000000", "Ridge Academy", "Fresno", "Closed"),
]

# Ten 1945 releases in strictly descending popularity, after two rows that
# pin the sample values shown in schema serializations.
MOVIES_1945 = [
    ("Brief Encounter", 95),
    ("Children of Paradise", 90),
    ("Rome, Open City", 85),
    ("Scarlet Street", 80),
    ("The Lost Weekend", 75),
    ("Spellbound", 70),
    ("Detour", 65),
    ("Mildred Pierce", 60),
    ("I Know Where I’m Going!", 55),
    ("Leave Her to Heaven", 50),
]


def build_school_db(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.execute(
        'CREATE TABLE schools ("cdscode" TEXT PRIMARY KEY, "school" TEXT, "city" TEXT, "statustype" TEXT)'
    )
    conn.executemany("INSERT INTO schools VALUES (?, ?, ?, ?)", SCHOOL_ROWS)
    conn.commit()
    conn.close()


def build_movies_db(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.execute(
        "CREATE TABLE movies ("
        '"movie_id" INTEGER PRIMARY KEY, "movie_title" TEXT, '
        '"movie_release_year" INTEGER, "movie_popularity" INTEGER)'
    )
    rows = [(1, "La Antena", 2007, 105), (2, "Elementary Particles", 2006, 23)]
    rows += [(3 + i, title, 1945, pop) for i, (title, pop) in enumerate(MOVIES_1945)]
    conn.executemany("INSERT INTO movies VALUES (?, ?, ?, ?)", rows)
    conn.commit()
    conn.close()


def build_library_db(path: Path) -> None:
    """Two tables joined by a foreign key, for FK introspection tests."""
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(path)
    conn.execute('CREATE TABLE authors ("author_id" INTEGER PRIMARY KEY, "name" TEXT)')
    conn.execute(
        'CREATE TABLE books ("book_id" INTEGER PRIMARY KEY, "title" TEXT, '
        '"author_id" INTEGER REFERENCES authors("author_id"))'
    )
    conn.executemany("INSERT INTO authors VALUES (?, ?)", [(1945, "Jane Doe"), (2, "Sam Roe")])
    conn.executemany("INSERT INTO books VALUES (?, ?, ?)", [(1, "First Book", 1945), (2, "Second Book", 2)])
    conn.commit()
    conn.close()


# question, evidence, db_id, gold SQL, difficulty
CORPUS = [
    ("How many schools are there?", "", "school", "SELECT count(*) FROM schools", "simple"),
    ("How many are active in San Joaquin?", "", "school",
     "SELECT count(*) FROM schools WHERE statustype = 'Active' AND city = 'San Joaquin'", "moderate"),
    ("List all school names.", "", "school", "SELECT school FROM schools", "simple"),
    ("Which schools are active?", "", "school", "SELECT school FROM schools WHERE statustype = 'Active'", "moderate"),
    ("Which cities have schools?", "", "school", "SELECT DISTINCT city FROM schools", "simple"),
    ("Name the school located in Fresno.", "", "school", "SELECT school FROM schools WHERE city = 'Fresno'", "simple"),
    ("How many schools are closed?", "", "school",
     "SELECT count(*) FROM schools WHERE statustype = 'Closed'", "challenging"),
    ("What is the code of Alameda High?", "", "school",
     "SELECT cdscode FROM schools WHERE school = 'Alameda High'", "moderate"),
    ("List school names in alphabetical order.", "", "school",
     "SELECT school FROM schools ORDER BY school", "challenging"),
    ("Which cities have an active school?", "", "school",
     "SELECT city FROM schools WHERE statustype = 'Active'", "simple"),
    ("How many movies were released in 1945?", "released in the year 1945 refers to movie_release_year = 1945",
     "movies", "SELECT count(*) FROM movies WHERE movie_release_year = 1945", "simple"),
    ("Name movie titles released in year 1945. Sort the listing by the descending order of movie popularity.",
     "released in the year 1945 refers to movie_release_year = 1945", "movies",
     "SELECT movie_title FROM movies WHERE movie_release_year = 1945 ORDER BY movie_popularity DESC", "moderate"),
    ("What is the most popular movie?", "", "movies",
     "SELECT movie_title FROM movies ORDER BY movie_popularity DESC LIMIT 1", "challenging"),
    ("List movie titles released in 2007.", "", "movies",
     "SELECT movie_title FROM movies WHERE movie_release_year = 2007", "simple"),
    ("How many movies are in the database?", "", "movies", "SELECT count(*) FROM movies", "simple"),
    ("What is the average popularity of 1945 movies?", "", "movies",
     "SELECT avg(movie_popularity) FROM movies WHERE movie_release_year = 1945", "moderate"),
    ("Which 1945 movie is the least popular?", "", "movies",
     "SELECT movie_title FROM movies WHERE movie_release_year = 1945 ORDER BY movie_popularity LIMIT 1",
     "challenging"),
    ("Which release years appear in the data?", "", "movies",
     "SELECT DISTINCT movie_release_year FROM movies", "simple"),
    ("Which 1945 movies have popularity above 60?", "", "movies",
     "SELECT movie_title FROM movies WHERE movie_release_year = 1945 AND movie_popularity > 60", "moderate"),
    ("What is the id of Detour?", "", "movies", "SELECT movie_id FROM movies WHERE movie_title = 'Detour'", "simple"),
]


@pytest.fixture(scope="session")
def db_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("dbs")
    build_school_db(root / "school" / "school.sqlite")
    build_movies_db(root / "movies" / "movies.sqlite")
    build_library_db(root / "library" / "library.sqlite")
    return root


@pytest.fixture(scope="session")
def school_db(db_root) -> Path:
    return db_root / "school" / "school.sqlite"


@pytest.fixture(scope="session")
def movies_db(db_root) -> Path:
    return db_root / "movies" / "movies.sqlite"


@pytest.fixture(scope="session")
def library_db(db_root) -> Path:
    return db_root / "library" / "library.sqlite"


@pytest.fixture(scope="session")
def school_graph(school_db):
    return introspect(school_db)


@pytest.fixture(scope="session")
def movies_graph(movies_db):
    return introspect(movies_db)


@pytest.fixture(scope="session")
def school_index(school_db, school_graph):
    return build_value_index(school_db, school_graph)


def corpus_records() -> list[dict]:
    return [
        {"question": q, "evidence": e, "db_id": db, "SQL": sql, "difficulty": diff}
        for q, e, db, sql, diff in CORPUS
    ]


@pytest.fixture(scope="session")
def corpus_file(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("data") / "corpus.json"
    path.write_text(json.dumps(corpus_records(), ensure_ascii=False, indent=1), encoding="utf-8")
    return path


@pytest.fixture()
def corpus_split(corpus_file):
    return load_dataset(corpus_file, "bird")


@pytest.fixture()
def gold_predictions(corpus_split) -> PredictionFile:
    return PredictionFile(
        entries={r.record_id: r.gold_sql for r in corpus_split.records}, model_handle="oracle"
    )


@pytest.fixture()
def judge_handle() -> ModelHandle:
    return ModelHandle(name="judge-a", kind="judge", endpoint_config_key="main")


@pytest.fixture()
def generator_handle() -> ModelHandle:
    return ModelHandle(name="gen-a", kind="generator", endpoint_config_key="main")


@pytest.fixture()
def rule_judge() -> RuleJudge:
    return RuleJudge()


@pytest.fixture()
def scripted_gateway(rule_judge) -> JudgeGateway:
    return JudgeGateway(CallableBackend(rule_judge))
