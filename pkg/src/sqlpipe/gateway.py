"""The single boundary to LLMs: prompt templates, transport, and verdict parsing.

Every judge or generator call goes through ``JudgeGateway.complete`` so the
whole pipeline can run live (HTTP), replayed (transcript store), or scripted
(callable backend for tests). Transcript keys are deterministic functions of
(model name, prompt), which makes replayed runs pure functions of their
inputs.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import requests

from .datasets import ModelHandle
from .errors import GatewayError, MissingTranscriptError, RenderError, VerdictParseError

logger = logging.getLogger(__name__)

DEFAULT_JUDGE_TEMPERATURE = 0.0
DEFAULT_GENERATOR_TEMPERATURE = 0.7
DEFAULT_MAX_TOKENS = 1024
DEFAULT_MAX_IN_FLIGHT = 8


@dataclass(frozen=True)
class TemplateSpec:
    filename: str
    required_slots: tuple[str, ...]
    frozen: bool  # byte-frozen templates are golden-tested; never edit them


# Slot names are written exactly as they appear in the template bodies.
TEMPLATES: dict[str, TemplateSpec] = {
    "query_fluency_check": TemplateSpec("query_fluency_check.txt", ("query",), True),
    "query_similarity_check": TemplateSpec("query_similarity_check.txt", ("query1", "query2"), True),
    "consistency_check": TemplateSpec("consistency_check.txt", ("query", "table_info", "SQL"), True),
    "sql_correctness_label": TemplateSpec("sql_correctness_label.txt", ("query", "table_info", "sql"), True),
    "semantic_suggest": TemplateSpec("semantic_suggest.txt", ("question", "SQL", "table_info"), True),
    "semantic_fix": TemplateSpec("semantic_fix.txt", ("suggestion", "question", "SQL", "table_info"), True),
    "syntax_fix": TemplateSpec("syntax_fix.txt", ("error", "question", "sql", "table_info"), True),
    "ensemble_select": TemplateSpec("ensemble_select.txt", ("question", "table_info", "match_value", "options"), True),
    "keyword_extract": TemplateSpec("keyword_extract.txt", ("question", "evidence"), False),
    "second_filter": TemplateSpec("second_filter.txt", ("question", "keywords", "table_info", "match_value"), False),
    "paraphrase_generate": TemplateSpec("paraphrase_generate.txt", ("k", "question"), False),
    "example_rewrite": TemplateSpec("example_rewrite.txt", ("query", "SQL", "table_info"), False),
    "sql_interpret": TemplateSpec("sql_interpret.txt", ("table_info", "SQL"), False),
    "sql_summarize": TemplateSpec("sql_summarize.txt", ("interpretation",), False),
    "pair_synthesize": TemplateSpec("pair_synthesize.txt", ("k", "table_info"), False),
}


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    required_slots: tuple[str, ...]


_template_cache: dict[tuple[str, str | None], PromptTemplate] = {}


def load_template(template_id: str, template_dir: str | Path | None = None) -> PromptTemplate:
    """Load a template body, preferring an override directory when given."""
    if template_id not in TEMPLATES:
        raise RenderError(template_id, "<unknown template>")
    cache_key = (template_id, str(template_dir) if template_dir else None)
    if cache_key in _template_cache:
        return _template_cache[cache_key]
    spec = TEMPLATES[template_id]
    body = None
    if template_dir is not None:
        override = Path(template_dir) / spec.filename
        if override.exists():
            body = override.read_text(encoding="utf-8")
    if body is None:
        body = (resources.files("sqlpipe") / "templates" / spec.filename).read_text(encoding="utf-8")
    if body.endswith("\n"):
        body = body[:-1]
    template = PromptTemplate(template_id=template_id, body=body, required_slots=spec.required_slots)
    _template_cache[cache_key] = template
    return template


def render_prompt(template_id: str, bindings: dict[str, str], template_dir: str | Path | None = None) -> str:
    """Substitute ``[slot]`` markers; all required slots must be bound.

    Extra binding keys are ignored. Substitution is single-pass, so binding
    values are inserted verbatim.
    """
    template = load_template(template_id, template_dir)
    for slot in template.required_slots:
        if slot not in bindings:
            raise RenderError(template_id, slot)
    pattern = re.compile("|".join(re.escape(f"[{slot}]") for slot in template.required_slots))
    rendered = pattern.sub(lambda m: str(bindings[m.group(0)[1:-1]]), template.body)
    residual = [slot for slot in template.required_slots if f"[{slot}]" in rendered and f"[{slot}]" not in str(bindings.get(slot, ""))]
    if residual:
        raise RenderError(template_id, residual[0])
    return rendered


@dataclass(frozen=True)
class CallParams:
    temperature: float = DEFAULT_JUDGE_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None


@dataclass(frozen=True)
class JudgeCall:
    model: ModelHandle
    prompt: str
    params: CallParams = CallParams()

    @property
    def transcript_key(self) -> str:
        digest = hashlib.sha256(f"{self.model.name}\n{self.prompt}".encode("utf-8")).hexdigest()
        return digest


@dataclass
class Verdict:
    kind: str  # yes_no | binary_label | completed_reason | free_text
    value: object
    raw: str

    def as_bool(self) -> bool:
        if self.kind == "yes_no":
            return bool(self.value)
        if self.kind == "binary_label":
            return self.value == 1
        if self.kind == "completed_reason":
            return bool(self.value.get("completed"))
        raise VerdictParseError(f"verdict kind {self.kind} has no boolean reading")


def find_json_objects(text: str) -> list[str]:
    """Balanced top-level ``{...}`` spans in free text, string-aware."""
    spans = []
    depth = 0
    start = None
    in_str = False
    escaped = False
    for i, ch in enumerate(text):
        if in_str:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == '"':
            in_str = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                spans.append(text[start : i + 1])
                start = None
    return spans


def parse_verdict(text: str, kind: str) -> Verdict:
    """Parse a judge response into a structured verdict; raises on junk."""
    if kind == "free_text":
        return Verdict(kind=kind, value=text, raw=text)
    if kind == "yes_no":
        m = re.match(r"\s*([A-Za-z]+)", text)
        token = m.group(1).lower() if m else ""
        if token in ("yes", "no"):
            return Verdict(kind=kind, value=token == "yes", raw=text)
        raise VerdictParseError(f"expected yes/no, got {text[:80]!r}")
    if kind == "binary_label":
        m = re.match(r"\s*([01])\b", text)
        if m:
            return Verdict(kind=kind, value=int(m.group(1)), raw=text)
        raise VerdictParseError(f"expected 0/1 label, got {text[:80]!r}")
    if kind == "completed_reason":
        for span in find_json_objects(text):
            try:
                obj = json.loads(span)
            except json.JSONDecodeError:
                continue
            keys = {k.lower(): v for k, v in obj.items()} if isinstance(obj, dict) else {}
            if "completed" in keys:
                completed = str(keys["completed"]).strip().lower().startswith("yes")
                reason = str(keys.get("reason", ""))
                return Verdict(kind=kind, value={"completed": completed, "reason": reason}, raw=text)
        raise VerdictParseError(f"no Completed/Reason object found in {text[:80]!r}")
    raise VerdictParseError(f"unknown verdict kind {kind!r}")


# --- Backends ----------------------------------------------------------------


class TranscriptStore:
    """JSON Lines store of {key, response} pairs recorded from live runs."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.entries: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        obj = json.loads(line)
                        self.entries[obj["key"]] = obj["response"]

    def get(self, key: str) -> str | None:
        return self.entries.get(key)

    def put(self, key: str, response: str, prompt: str = "", model: str = "") -> None:
        with self._lock:
            if key in self.entries:
                return
            self.entries[key] = response
            if self.path:
                record = {"key": key, "model": model, "prompt": prompt, "response": response}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False) + "\n")


class MockBackend:
    """Replays recorded transcripts; a miss is an error, never a fabrication."""

    def __init__(self, store: TranscriptStore):
        self.store = store

    def complete(self, call: JudgeCall) -> str:
        response = self.store.get(call.transcript_key)
        if response is None:
            raise MissingTranscriptError(call.transcript_key, call.prompt[:80])
        return response


class CallableBackend:
    """Computes responses with a plain function; used for scripted judges."""

    def __init__(self, fn: Callable[[JudgeCall], str]):
        self.fn = fn

    def complete(self, call: JudgeCall) -> str:
        return self.fn(call)


class HttpBackend:
    """OpenAI-style chat-completions client with exponential backoff retries."""

    def __init__(
        self,
        endpoints: dict[str, dict],
        retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 120.0,
        session: requests.Session | None = None,
    ):
        self.endpoints = endpoints
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def complete(self, call: JudgeCall) -> str:
        endpoint = self.endpoints.get(call.model.endpoint_config_key)
        if endpoint is None:
            raise GatewayError(f"no endpoint configured for key {call.model.endpoint_config_key!r}")
        url = endpoint["base_url"].rstrip("/") + endpoint.get("path", "/v1/chat/completions")
        headers = {"Content-Type": "application/json"}
        key_env = endpoint.get("api_key_env")
        if key_env:
            token = os.environ.get(key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        payload: dict = {
            "model": endpoint.get("model", call.model.name),
            "messages": [{"role": "user", "content": call.prompt}],
            "temperature": call.params.temperature,
            "max_tokens": call.params.max_tokens,
        }
        if call.params.seed is not None:
            payload["seed"] = call.params.seed

        delay = self.backoff_s
        last_error = "unknown"
        for attempt in range(self.retries):
            try:
                resp = self.session.post(url, json=payload, headers=headers, timeout=self.timeout_s)
                if resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise GatewayError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                else:
                    body = resp.json()
                    return body["choices"][0]["message"]["content"]
            except GatewayError:
                raise
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = str(exc)
            if attempt < self.retries - 1:
                time.sleep(delay)
                delay *= 2
        raise GatewayError(f"gave up after {self.retries} attempts: {last_error}")


class JudgeGateway:
    """Budgets, records, and dispatches completion calls to one backend."""

    def __init__(self, backend, max_in_flight: int = DEFAULT_MAX_IN_FLIGHT, record_store: TranscriptStore | None = None):
        self.backend = backend
        self.record_store = record_store
        self._budget = threading.Semaphore(max_in_flight)

    def complete(self, call: JudgeCall) -> str:
        with self._budget:
            response = self.backend.complete(call)
        if self.record_store is not None:
            self.record_store.put(call.transcript_key, response, prompt=call.prompt, model=call.model.name)
        return response

    def ask(
        self,
        model: ModelHandle,
        template_id: str,
        bindings: dict[str, str],
        kind: str,
        params: CallParams | None = None,
        max_reasks: int = 0,
        template_dir: str | Path | None = None,
    ) -> Verdict:
        """Render, complete, and parse; re-asks the model on parse failures.

        Raises VerdictParseError once re-asks are exhausted; verification
        callers map that to a negative verdict (fail closed).
        """
        prompt = render_prompt(template_id, bindings, template_dir)
        call = JudgeCall(model=model, prompt=prompt, params=params or CallParams())
        last_exc: VerdictParseError | None = None
        for _ in range(max_reasks + 1):
            response = self.complete(call)
            try:
                return parse_verdict(response, kind)
            except VerdictParseError as exc:
                last_exc = exc
        raise last_exc if last_exc is not None else VerdictParseError("no attempts made")
