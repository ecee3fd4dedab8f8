"""Multiple-choice selection over execution-distinct candidate groups.

Grouping the candidates by execution result and showing one representative
per group turns N candidates into a small lettered option list; a judge picks
the final SQL, and majority vote over group sizes is the fallback. Ordering
groups by size puts the self-consistency answer at letter A, so the fallback
and the judge's first option coincide.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .datasets import ModelHandle, dataclass_from_dict, register_artifact
from .errors import GatewayError, InputError
from .execution import (
    DEFAULT_TIMEOUT_MS,
    CandidateSql,
    ExecutionGroup,
    ExecutionOutcome,
    execute,
    group_by_execution,
    results_equal,
)
from .gateway import CallParams, JudgeCall, JudgeGateway, render_prompt

logger = logging.getLogger(__name__)

PREVIEW_ROWS = 10


def index_to_letter(index: int) -> str:
    """0 -> A, 25 -> Z, 26 -> AA, ... (options are never capped)."""
    letters = ""
    index += 1
    while index > 0:
        index, rem = divmod(index - 1, 26)
        letters = chr(ord("A") + rem) + letters
    return letters


def _display_value(value: Any) -> Any:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        quantized = float(f"{value:.9g}")
        return int(quantized) if quantized.is_integer() else quantized
    return value


def render_preview(outcome: ExecutionOutcome) -> str:
    """Top rows rendered exactly as the comparator sees them."""
    if outcome.status == "rows":
        rows = [tuple(_display_value(v) for v in row) for row in outcome.rows[:PREVIEW_ROWS]]
        return repr(rows)
    return f"Error: {outcome.error_message or outcome.status}"


@dataclass
class Option:
    letter: str
    candidate_index: int
    sql: str
    preview: str
    group_size: int


@dataclass
class OptionSheet:
    options: list[Option]

    @property
    def letters(self) -> list[str]:
        return [o.letter for o in self.options]

    def render(self) -> str:
        lines = []
        for option in self.options:
            lines.append(f"{option.letter}: {option.sql}")
            lines.append(f"Execution result(top 10 lines): {option.preview}")
        return "\n".join(lines)


@register_artifact("selection_outcome")
@dataclass
class SelectionOutcome:
    record_id: str
    chosen_letter: str
    chosen_sql: str
    method: str  # judge | vote_fallback
    judge_raw: str = ""

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "SelectionOutcome":
        return dataclass_from_dict(cls, obj)


def build_options(groups: Sequence[ExecutionGroup], candidates: Sequence[CandidateSql]) -> OptionSheet:
    """One lettered option per execution group, in group order."""
    covered = sorted(i for g in groups for i in g.members)
    if covered != list(range(len(candidates))):
        raise InputError("groups do not partition the candidate list")
    options = []
    for i, group in enumerate(groups):
        rep = candidates[group.representative]
        outcome = rep.outcome if rep.outcome is not None else ExecutionOutcome(status="db_error", error_message="not executed")
        options.append(
            Option(
                letter=index_to_letter(i),
                candidate_index=group.representative,
                sql=rep.sql,
                preview=render_preview(outcome),
                group_size=len(group.members),
            )
        )
    return OptionSheet(options=options)


_LETTER_RE = re.compile(r"\s*(?:option\s+)?([A-Za-z]+)\b", re.IGNORECASE)


def parse_letter(text: str, letters: Sequence[str]) -> str | None:
    m = _LETTER_RE.match(text)
    if not m:
        return None
    letter = m.group(1).upper()
    return letter if letter in letters else None


def majority_vote(groups: Sequence[ExecutionGroup], candidates: Sequence[CandidateSql], record_id: str = "") -> SelectionOutcome:
    """Largest group's representative wins; ties go to the lowest index."""
    if not groups:
        raise InputError("majority vote requires at least one group")
    winner_pos = min(range(len(groups)), key=lambda i: (-len(groups[i].members), groups[i].representative))
    group = groups[winner_pos]
    return SelectionOutcome(
        record_id=record_id,
        chosen_letter=index_to_letter(winner_pos),
        chosen_sql=candidates[group.representative].sql,
        method="vote_fallback",
    )


def select(
    question: str,
    evidence: str,
    schema_text: str,
    match_value: str,
    sheet: OptionSheet,
    groups: Sequence[ExecutionGroup],
    candidates: Sequence[CandidateSql],
    judge: ModelHandle,
    gateway: JudgeGateway,
    record_id: str = "",
    max_reasks: int = 2,
) -> SelectionOutcome:
    """Put the option sheet to the judge; fall back to majority vote when no
    parseable letter comes back after the re-asks."""
    if not sheet.options:
        raise InputError("cannot select from an empty option sheet")
    if len(sheet.options) == 1:
        only = sheet.options[0]
        return SelectionOutcome(record_id=record_id, chosen_letter=only.letter, chosen_sql=only.sql, method="judge")

    bound_question = f"{evidence}; {question}" if evidence.strip() else question
    prompt = render_prompt(
        "ensemble_select",
        {
            "question": bound_question,
            "table_info": schema_text,
            "match_value": match_value,
            "options": sheet.render(),
        },
    )
    call = JudgeCall(model=judge, prompt=prompt, params=CallParams())
    raw = ""
    for _ in range(max_reasks + 1):
        try:
            raw = gateway.complete(call)
        except GatewayError as exc:
            logger.warning("selection call failed for %s: %s", record_id, exc)
            break
        letter = parse_letter(raw, sheet.letters)
        if letter is not None:
            chosen = next(o for o in sheet.options if o.letter == letter)
            return SelectionOutcome(
                record_id=record_id, chosen_letter=letter, chosen_sql=chosen.sql, method="judge", judge_raw=raw
            )
    fallback = majority_vote(groups, candidates, record_id=record_id)
    fallback.judge_raw = raw
    return fallback


@dataclass
class ChoiceItem:
    """Inputs for one multiple-choice training example."""

    record_id: str
    question: str
    evidence: str
    schema_text: str
    match_value: str
    gold_sql: str
    candidates: list[CandidateSql]
    db_file: str


@register_artifact("choice_example")
@dataclass
class ChoiceExample:
    record_id: str
    prompt: str
    answer: str = ""
    skipped: bool = False
    skip_reason: str = ""

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "ChoiceExample":
        return dataclass_from_dict(cls, obj)


@dataclass
class ChoiceBuildReport:
    total: int
    emitted: int
    skipped_no_match: int
    skipped_gold_error: int
    skipped_single_group: int


def build_choice_training_file(
    items: Sequence[ChoiceItem],
    timeout_ms: int = DEFAULT_TIMEOUT_MS,
) -> tuple[list[ChoiceExample], ChoiceBuildReport]:
    """Selection-model SFT examples: the full option prompt plus the letter
    whose execution matches gold.

    Records whose gold fails to execute are skipped and counted; records
    where no option matches gold are emitted as distractor-only examples
    with the skip flag set.
    """
    examples = []
    no_match = gold_error = single_group = 0
    for item in items:
        gold_out = execute(item.db_file, item.gold_sql, timeout_ms)
        if gold_out.status != "rows":
            gold_error += 1
            logger.warning("gold SQL of %s does not execute; skipped", item.record_id)
            continue
        groups = group_by_execution(item.candidates, item.db_file, timeout_ms)
        if len(groups) < 2:
            single_group += 1
            continue
        sheet = build_options(groups, item.candidates)
        bound_question = f"{item.evidence}; {item.question}" if item.evidence.strip() else item.question
        prompt = render_prompt(
            "ensemble_select",
            {
                "question": bound_question,
                "table_info": item.schema_text,
                "match_value": item.match_value,
                "options": sheet.render(),
            },
        )
        answer = ""
        for option, group in zip(sheet.options, groups):
            outcome = item.candidates[group.representative].outcome
            if outcome is not None and results_equal(outcome, gold_out):
                answer = option.letter
                break
        if answer:
            examples.append(ChoiceExample(record_id=item.record_id, prompt=prompt, answer=answer))
        else:
            no_match += 1
            examples.append(
                ChoiceExample(record_id=item.record_id, prompt=prompt, skipped=True, skip_reason="no option matches gold")
            )
    report = ChoiceBuildReport(
        total=len(items),
        emitted=len(examples),
        skipped_no_match=no_match,
        skipped_gold_error=gold_error,
        skipped_single_group=single_group,
    )
    return examples, report
