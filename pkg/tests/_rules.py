"""Deterministic scripted model used as the gateway backend in tests.

Responses are pure functions of the prompt text, so recorded transcripts and
replayed runs are byte-stable. Individual tests override behaviors by
prepending (marker, response) rules.
"""
from __future__ import annotations

import json
import re

from sqlpipe.gateway import JudgeCall


def _after(prompt: str, marker: str) -> str:
    idx = prompt.find(marker)
    if idx < 0:
        return ""
    return prompt[idx + len(marker):].strip()


def _line_after(prompt: str, marker: str) -> str:
    tail = _after(prompt, marker)
    return tail.splitlines()[0].strip() if tail else ""


def _schema_tables(prompt: str) -> dict[str, list[str]]:
    """Parse CREATE TABLE blocks out of a rendered prompt."""
    tables: dict[str, list[str]] = {}
    current = None
    for line in prompt.splitlines():
        m = re.match(r"\s*CREATE TABLE (\S+) \($", line.rstrip())
        if m:
            current = m.group(1)
            tables[current] = []
            continue
        if current is not None:
            cm = re.match(r'\s*"([^"]+)"\s', line)
            if cm:
                tables[current].append(cm.group(1))
            elif line.strip() == ")":
                current = None
    return tables


def default_response(prompt: str) -> str:
    if "statements are fluent" in prompt:
        return "yes"
    if "core expressions of the following two sentences" in prompt:
        return "yes"
    if "completely completed the question" in prompt:
        return json.dumps({"Completed": "Yes", "Reason": "covers the question"})
    if "judge whether the given SQL is correct" in prompt:
        return "1"
    if "comma-separated list of keywords" in prompt:
        question = _line_after(prompt, "### Question:")
        words = [w.strip("?.!,'") for w in question.split()]
        keywords = [w for w in words if len(w) >= 4][:4]
        return ", ".join(keywords) if keywords else "data"
    if "select only the tables and columns" in prompt:
        tables = _schema_tables(prompt)
        return "\n".join(f"{t}: {', '.join(cols)}" for t, cols in tables.items())
    if "Rewrite the following question in" in prompt:
        m = re.search(r"in (\d+) different ways", prompt)
        k = int(m.group(1)) if m else 1
        question = _line_after(prompt, "### Question:")
        stems = ["Could you tell me: ", "Please answer this: ", "I would like to know: ",
                 "Tell me the following: ", "Answer me this: "]
        return "\n".join(f"{stems[i % len(stems)]}{question}" for i in range(k))
    if "similar question and SQLite query for the target database schema" in prompt:
        tables = _schema_tables(prompt)
        name = next(iter(tables), "t")
        return json.dumps({"query": f"How many rows does {name} have?", "sql": f"SELECT count(*) FROM {name}"})
    if "explain step by step what the SQLite query" in prompt:
        return "The query reads the listed tables and returns the requested rows."
    if "into a one-sentence user query" in prompt:
        return "What rows does this query return?"
    if "user queries with matching SQLite statements" in prompt:
        m = re.search(r"write (\d+) different", prompt)
        k = int(m.group(1)) if m else 1
        tables = _schema_tables(prompt)
        name = next(iter(tables), "t")
        variants = [
            {"query": f"How many rows does {name} have?", "sql": f"SELECT count(*) FROM {name}"},
            {"query": f"Show one row of {name}.", "sql": f"SELECT * FROM {name} LIMIT 1"},
            {"query": f"Show two rows of {name}.", "sql": f"SELECT * FROM {name} LIMIT 2"},
        ]
        return "\n".join(json.dumps(v) for v in variants[:k])
    if "You are a SQL expert" in prompt:
        return "The SQL query is correct, and no modifications are needed."
    if "use the provided Tables to fix any problem" in prompt:
        return _line_after(prompt, "### Buggy SQLite QUERY:")
    if "You are a database administrator" in prompt:
        return _line_after(prompt, "### Buggy SQLite QUERY:")
    if "select the most relevant SQL" in prompt:
        return "A"
    return "yes"


class RuleJudge:
    """Callable backend: prompt-pattern rules with per-test overrides."""

    def __init__(self, overrides=None):
        self.calls: list[JudgeCall] = []
        self.overrides = list(overrides or [])

    def add(self, marker, response) -> None:
        self.overrides.insert(0, (marker, response))

    def prompts(self, marker: str) -> list[str]:
        return [c.prompt for c in self.calls if marker in c.prompt]

    def __call__(self, call: JudgeCall) -> str:
        self.calls.append(call)
        for marker, response in self.overrides:
            hit = marker(call.prompt) if callable(marker) else marker in call.prompt
            if hit:
                return response(call.prompt) if callable(response) else response
        return default_response(call.prompt)
