"""Adaptive training-data repair: replace gold SQL the verifier rejects when
the model's prediction passes the same verification."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .catalog import SchemaGraph, serialize_schema
from .datasets import DatasetSplit, PredictionFile, QuestionRecord, dataclass_from_dict, join_predictions, register_artifact
from .errors import InputError
from .gateway import JudgeGateway
from .verification import CheckPolicy, VerdictBundle, verify_pair

logger = logging.getLogger(__name__)

ACTIONS = ("keep", "replace", "flag_both_bad")

# A verifier maps (record, sql) to a VerdictBundle in repair mode.
Verifier = Callable[[QuestionRecord, str], VerdictBundle]


@register_artifact("repair_decision")
@dataclass
class RepairDecision:
    record_id: str
    gold_ok: bool
    pred_ok: bool
    action: str
    gold_bundle: VerdictBundle | None = None
    pred_bundle: VerdictBundle | None = None

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "RepairDecision":
        obj = dict(obj)
        for key in ("gold_bundle", "pred_bundle"):
            if obj.get(key) is not None:
                obj[key] = VerdictBundle.from_dict(obj[key])
        return dataclass_from_dict(cls, obj)


@dataclass
class RepairReport:
    total: int
    replaced: int
    flagged: int
    dropped: int = 0
    decisions_path: str = ""


def decide(gold_bundle: VerdictBundle, pred_bundle: VerdictBundle) -> str:
    """The four-case repair rule: replace only when the prediction verifies
    and the gold label does not; flag when neither does."""
    for bundle, side in ((gold_bundle, "gold"), (pred_bundle, "pred")):
        if bundle.mode != "repair":
            raise InputError(f"{side} bundle was produced in mode {bundle.mode!r}, expected repair")
    gold_ok = gold_bundle.overall == "accept"
    pred_ok = pred_bundle.overall == "accept"
    if not gold_ok and pred_ok:
        return "replace"
    if not gold_ok and not pred_ok:
        return "flag_both_bad"
    return "keep"


def make_bundle_verifier(
    db_resolver: Callable[[str], Path],
    graphs: dict[str, SchemaGraph],
    policy: CheckPolicy,
    gateway: JudgeGateway,
) -> Verifier:
    """Default verifier: the repair-mode check stack (sql check + consistency)."""

    def verifier(record: QuestionRecord, sql: str) -> VerdictBundle:
        schema_text = serialize_schema(graphs[record.db_id])
        query = f"{record.evidence}; {record.question}" if record.evidence else record.question
        return verify_pair(
            query=query,
            sql=sql,
            db_file=db_resolver(record.db_id),
            schema_text=schema_text,
            mode="repair",
            policy=policy,
            gateway=gateway,
        )

    return verifier


def repair_dataset(
    split: DatasetSplit,
    predictions: PredictionFile,
    verifier: Verifier,
    drop_flagged: bool = False,
) -> tuple[DatasetSplit, RepairReport, list[RepairDecision]]:
    """Verify gold and predicted SQL for every record and apply the repair rule.

    Replaced records carry the prediction as gold_sql plus a ``repaired``
    annotation with the original kept for audit. Flagged records stay
    unchanged unless ``drop_flagged`` is set.
    """
    pairs = join_predictions(split, predictions)
    repaired_records: list[QuestionRecord] = []
    decisions: list[RepairDecision] = []
    replaced = flagged = dropped = 0
    for record, pred_sql in pairs:
        gold_bundle = verifier(record, record.gold_sql)
        pred_bundle = verifier(record, pred_sql)
        action = decide(gold_bundle, pred_bundle)
        decisions.append(
            RepairDecision(
                record_id=record.record_id,
                gold_ok=gold_bundle.overall == "accept",
                pred_ok=pred_bundle.overall == "accept",
                action=action,
                gold_bundle=gold_bundle,
                pred_bundle=pred_bundle,
            )
        )
        if action == "replace":
            replaced += 1
            repaired_records.append(
                replace(record, gold_sql=pred_sql, repaired=True, original_sql=record.gold_sql)
            )
        elif action == "flag_both_bad":
            flagged += 1
            if drop_flagged:
                dropped += 1
                continue
            repaired_records.append(record)
        else:
            repaired_records.append(record)

    repaired_split = DatasetSplit(name=split.name, records=repaired_records, source_format=split.source_format)
    report = RepairReport(total=len(pairs), replaced=replaced, flagged=flagged, dropped=dropped)
    return repaired_split, report, decisions
