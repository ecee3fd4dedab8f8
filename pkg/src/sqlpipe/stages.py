"""File-to-file stage implementations behind the CLI commands.

Stages communicate only through JSON Lines artifacts, so any stage can be
rerun, resumed, or driven by an external tool that speaks the same files.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import augmentation, correction, ensemble, linking, repair, verification
from .catalog import SchemaGraph, ValueIndex, build_value_index, introspect, render_matched_block, serialize_schema
from .config import PipelineConfig, resolve_db_path
from .datasets import (
    CandidateRow,
    DatasetSplit,
    PredictionFile,
    dataclass_from_dict,
    load_dataset,
    load_predictions,
    join_predictions,
    register_artifact,
    read_artifact,
    save_dataset,
    save_predictions,
    write_artifact,
)
from .errors import InputError
from .execution import CandidateSql, EvalPair, execution_accuracy, group_by_execution
from .gateway import JudgeGateway
from .verification import CheckPolicy

logger = logging.getLogger(__name__)


@register_artifact("pair_row")
@dataclass
class PairRow:
    """A query-SQL pair queued for verification."""

    query: str
    sql: str
    db_id: str
    original_query: str = ""
    source_record_id: str = ""

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "PairRow":
        return dataclass_from_dict(cls, obj)


class DbCache:
    """Per-run cache of graphs, indexes, and schema texts by db_id."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self._graphs: dict[str, SchemaGraph] = {}
        self._indexes: dict[str, ValueIndex] = {}

    def path(self, db_id: str) -> Path:
        return resolve_db_path(self.cfg.db_root, db_id)

    def graph(self, db_id: str) -> SchemaGraph:
        if db_id not in self._graphs:
            self._graphs[db_id] = introspect(self.path(db_id))
        return self._graphs[db_id]

    def index(self, db_id: str) -> ValueIndex:
        if db_id not in self._indexes:
            self._indexes[db_id] = build_value_index(self.path(db_id), self.graph(db_id))
        return self._indexes[db_id]

    def graphs(self, db_ids) -> dict[str, SchemaGraph]:
        return {db_id: self.graph(db_id) for db_id in sorted(set(db_ids))}


def check_policy(cfg: PipelineConfig) -> CheckPolicy:
    return CheckPolicy(judges=cfg.judge_handles(), max_reasks=cfg.max_reasks, timeout_ms=cfg.timeout_ms)


def _load_split(path: str | Path, source_format: str) -> DatasetSplit:
    return load_dataset(path, source_format)


def stage_link(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    dataset_path: str | Path,
    source_format: str,
    out_path: str | Path,
    scorer=None,
) -> int:
    """Schema-link every record; emits LinkResult JSON Lines."""
    split = _load_split(dataset_path, source_format)
    cache = DbCache(cfg)
    judge = cfg.model(cfg.default_judge)
    results = []
    for record in split.records:
        results.append(
            linking.link_record(
                record_id=record.record_id,
                question=record.question,
                evidence=record.evidence,
                graph=cache.graph(record.db_id),
                index=cache.index(record.db_id),
                judge=judge,
                gateway=gateway,
                scorer=scorer,
                cfg=cfg.link,
            )
        )
    return write_artifact(results, out_path)


def load_link_results(path: str | Path) -> dict[str, linking.LinkResult]:
    return {r.record_id: r for r in read_artifact(path) if isinstance(r, linking.LinkResult)}


def stage_verify(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    pairs_path: str | Path,
    mode: str,
    out_path: str | Path,
) -> int:
    """Verify a pairs file in the given mode; emits VerdictBundle JSON Lines."""
    cache = DbCache(cfg)
    policy = check_policy(cfg)
    rows = [r for r in read_artifact(pairs_path) if isinstance(r, PairRow)]
    bundles = []
    for row in rows:
        bundles.append(
            verification.verify_pair(
                query=row.query,
                sql=row.sql,
                db_file=cache.path(row.db_id),
                schema_text=serialize_schema(cache.graph(row.db_id)),
                mode=mode,
                policy=policy,
                gateway=gateway,
                original_query=row.original_query or None,
            )
        )
    return write_artifact(bundles, out_path)


def stage_repair(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    dataset_path: str | Path,
    source_format: str,
    pred_path: str | Path,
    out_dataset_path: str | Path,
    decisions_path: str | Path,
    report_path: str | Path,
    drop_flagged: bool = False,
    verifier=None,
) -> repair.RepairReport:
    """Adaptive repair of a training split against a predictions file."""
    split = _load_split(dataset_path, source_format)
    preds = load_predictions(pred_path)
    cache = DbCache(cfg)
    if verifier is None:
        graphs = cache.graphs(r.db_id for r in split.records)
        verifier = repair.make_bundle_verifier(cache.path, graphs, check_policy(cfg), gateway)
    repaired, report, decisions = repair.repair_dataset(split, preds, verifier, drop_flagged=drop_flagged)
    save_dataset(repaired, out_dataset_path)
    write_artifact(decisions, decisions_path)
    report.decisions_path = str(decisions_path)
    Path(report_path).write_text(json.dumps(vars(report), indent=1, sort_keys=True), encoding="utf-8")
    return report


def stage_augment(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    dataset_path: str | Path,
    source_format: str,
    pred_path: str | Path,
    strategies: list[str],
    out_path: str | Path,
    iteration: int = 1,
    k: int | None = None,
) -> int:
    """Collect mispredicted records and run the requested augmentation
    strategies over them; emits every generated pair with its verdict."""
    if iteration > cfg.augment.iteration_cap:
        raise InputError(f"iteration {iteration} exceeds the cap {cfg.augment.iteration_cap}")
    split = _load_split(dataset_path, source_format)
    preds = load_predictions(pred_path)
    cache = DbCache(cfg)
    policy = check_policy(cfg)
    generator = cfg.model(cfg.default_generator or cfg.default_judge)
    k = k if k is not None else cfg.augment.k

    errors = augmentation.collect_errors(split, preds, cache.path, cfg.timeout_ms, iteration=iteration)
    logger.info("error set: %d of %d records (iteration %d)", len(errors.records), len(split.records), iteration)

    all_db_ids = sorted({r.db_id for r in split.records})
    pairs: list[augmentation.AugmentedPair] = []
    for pos, record in enumerate(errors.records):
        db_file = cache.path(record.db_id)
        schema_text = serialize_schema(cache.graph(record.db_id))
        if "query" in strategies or "hyb" in strategies:
            pairs.extend(
                augmentation.query_diffusion(record, generator, k, gateway, db_file, schema_text, policy)
            )
        if "example" in strategies or "hyb" in strategies:
            targets = [d for d in all_db_ids if d != record.db_id]
            if targets:
                target_id = targets[pos % len(targets)]  # round-robin over other databases
                pair = augmentation.example_diffusion(
                    record, cache.graph(target_id), generator, gateway, cache.path(target_id), policy
                )
                if pair is not None:
                    pairs.append(pair)
        if "sql2query" in strategies:
            pairs.append(
                augmentation.sql2query(
                    record.gold_sql, cache.graph(record.db_id), generator, gateway, db_file, policy,
                    source_record_id=record.record_id,
                )
            )
        if "query2sql" in strategies:
            pairs.extend(
                augmentation.query2sql(cache.graph(record.db_id), generator, k, gateway, db_file, policy)
            )
    return write_artifact(pairs, out_path)


def stage_build_sft(
    cfg: PipelineConfig,
    dataset_path: str | Path,
    source_format: str,
    augmented_paths: list[str | Path],
    link_path: str | Path | None,
    out_path: str | Path,
    stats_path: str | Path | None = None,
    iteration: int = 1,
) -> augmentation.SftFile:
    """Assemble the active-learning SFT file from originals plus accepted pairs."""
    split = _load_split(dataset_path, source_format)
    accepted = []
    for path in augmented_paths:
        for item in read_artifact(path):
            if isinstance(item, augmentation.AugmentedPair) and item.accepted:
                accepted.append(item)
    link_results = load_link_results(link_path) if link_path else None
    cache = DbCache(cfg)
    db_ids = {r.db_id for r in split.records} | {p.db_id for p in accepted}
    sft = augmentation.build_active_learning_set(
        split, accepted, link_results, cache.graphs(db_ids), iteration=iteration
    )
    augmentation.write_sft_file(sft, out_path)
    if stats_path is not None:
        Path(stats_path).write_text(json.dumps(sft.lineage, indent=1, sort_keys=True), encoding="utf-8")
    return sft


def _candidates_by_record(path: str | Path) -> dict[str, list[CandidateRow]]:
    grouped: dict[str, list[CandidateRow]] = {}
    for row in read_artifact(path):
        if isinstance(row, CandidateRow):
            grouped.setdefault(row.record_id, []).append(row)
    return grouped


def stage_correct(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    candidates_path: str | Path,
    dataset_path: str | Path,
    source_format: str,
    link_path: str | Path | None,
    out_traces_path: str | Path,
    out_candidates_path: str | Path,
    max_syntax_rounds: int = 2,
) -> int:
    """Correct every candidate; emits traces plus the corrected candidate file."""
    split = _load_split(dataset_path, source_format)
    by_record = _candidates_by_record(candidates_path)
    link_results = load_link_results(link_path) if link_path else {}
    cache = DbCache(cfg)
    judge = cfg.model(cfg.default_judge)
    traces = []
    corrected = []
    for record in split.records:
        link = link_results.get(record.record_id)
        schema_text = serialize_schema(cache.graph(record.db_id), selection=link.selected if link else None)
        ctx = correction.CorrectionContext(
            question=record.question,
            evidence=record.evidence,
            schema_text=schema_text,
            db_file=str(cache.path(record.db_id)),
            judge=judge,
            gateway=gateway,
            max_syntax_rounds=max_syntax_rounds,
            timeout_ms=cfg.timeout_ms,
            record_id=record.record_id,
        )
        for row in by_record.get(record.record_id, []):
            trace = correction.correct(row.sql, ctx)
            traces.append(trace)
            corrected.append(
                CandidateRow(
                    record_id=record.record_id,
                    sql=trace.final_sql,
                    model_handle=row.model_handle,
                    stage="correction",
                )
            )
    write_artifact(traces, out_traces_path)
    write_artifact(corrected, out_candidates_path)
    return len(traces)


def stage_ensemble(
    cfg: PipelineConfig,
    gateway: JudgeGateway,
    candidates_path: str | Path,
    dataset_path: str | Path,
    source_format: str,
    link_path: str | Path | None,
    out_selections_path: str | Path,
    out_pred_path: str | Path,
    fallback: str = "judge",
) -> int:
    """Group candidates per record, select one SQL each, and emit both the
    selection outcomes and a predictions file for evaluation."""
    split = _load_split(dataset_path, source_format)
    by_record = _candidates_by_record(candidates_path)
    link_results = load_link_results(link_path) if link_path else {}
    cache = DbCache(cfg)
    judge = cfg.model(cfg.default_judge)
    selections = []
    predictions = {}
    for record in split.records:
        rows = by_record.get(record.record_id, [])
        if not rows:
            logger.warning("no candidates for %s; skipped", record.record_id)
            continue
        candidates = [CandidateSql(sql=r.sql, model_handle=r.model_handle, stage=r.stage) for r in rows]
        db_file = cache.path(record.db_id)
        groups = group_by_execution(candidates, db_file, cfg.timeout_ms)
        sheet = ensemble.build_options(groups, candidates)
        link = link_results.get(record.record_id)
        schema_text = serialize_schema(cache.graph(record.db_id), selection=link.selected if link else None)
        match_value = render_matched_block(
            [(m.table, m.column, m.value) for m in link.matched_values] if link else []
        )
        if fallback == "vote" or not cfg.default_judge:
            outcome = ensemble.majority_vote(groups, candidates, record_id=record.record_id)
        else:
            outcome = ensemble.select(
                question=record.question,
                evidence=record.evidence,
                schema_text=schema_text,
                match_value=match_value,
                sheet=sheet,
                groups=groups,
                candidates=candidates,
                judge=judge,
                gateway=gateway,
                record_id=record.record_id,
                max_reasks=cfg.max_reasks,
            )
        selections.append(outcome)
        predictions[record.record_id] = outcome.chosen_sql
    write_artifact(selections, out_selections_path)
    save_predictions(PredictionFile(entries=predictions, model_handle="ensemble"), out_pred_path)
    return len(selections)


def stage_build_choice_sft(
    cfg: PipelineConfig,
    candidates_path: str | Path,
    dataset_path: str | Path,
    source_format: str,
    link_path: str | Path | None,
    out_path: str | Path,
    report_path: str | Path | None = None,
) -> ensemble.ChoiceBuildReport:
    """Build the selection-model training file from gold-labeled records."""
    split = _load_split(dataset_path, source_format)
    by_record = _candidates_by_record(candidates_path)
    link_results = load_link_results(link_path) if link_path else {}
    cache = DbCache(cfg)
    items = []
    for record in split.records:
        rows = by_record.get(record.record_id, [])
        if not rows:
            continue
        link = link_results.get(record.record_id)
        schema_text = serialize_schema(cache.graph(record.db_id), selection=link.selected if link else None)
        match_value = render_matched_block(
            [(m.table, m.column, m.value) for m in link.matched_values] if link else []
        )
        items.append(
            ensemble.ChoiceItem(
                record_id=record.record_id,
                question=record.question,
                evidence=record.evidence,
                schema_text=schema_text,
                match_value=match_value,
                gold_sql=record.gold_sql,
                candidates=[CandidateSql(sql=r.sql, model_handle=r.model_handle, stage=r.stage) for r in rows],
                db_file=str(cache.path(record.db_id)),
            )
        )
    examples, report = ensemble.build_choice_training_file(items, cfg.timeout_ms)
    write_artifact(examples, out_path)
    if report_path is not None:
        Path(report_path).write_text(json.dumps(vars(report), indent=1, sort_keys=True), encoding="utf-8")
    return report


def stage_eval(
    cfg: PipelineConfig,
    dataset_path: str | Path,
    source_format: str,
    pred_path: str | Path,
    out_report_path: str | Path,
) -> dict:
    """Execution Accuracy with the per-difficulty breakdown, written as JSON."""
    split = _load_split(dataset_path, source_format)
    preds = load_predictions(pred_path)
    pairs = [
        EvalPair(
            gold_sql=record.gold_sql,
            pred_sql=pred_sql,
            db_file=str(resolve_db_path(cfg.db_root, record.db_id)),
            difficulty=record.difficulty,
            record_id=record.record_id,
        )
        for record, pred_sql in join_predictions(split, preds)
    ]
    report = execution_accuracy(pairs, cfg.timeout_ms)
    payload = {
        "total_ex": report.total,
        "breakdown": report.breakdown,
        "counts": report.counts,
        "invalid_gold": report.invalid_gold,
    }
    Path(out_report_path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    return payload


def render_report(out_dir: str | Path) -> tuple[str, dict]:
    """Combine whatever stage outputs exist under out_dir into one summary."""
    out_dir = Path(out_dir)
    summary: dict[str, Any] = {}
    lines = []

    eval_path = out_dir / "eval_report.json"
    if eval_path.exists():
        data = json.loads(eval_path.read_text(encoding="utf-8"))
        summary["eval"] = data
        lines.append("Execution accuracy")
        header = ["simple", "moderate", "challenging", "total"]
        lines.append("  " + "  ".join(f"{h:>12}" for h in header))
        cells = []
        for key in header:
            value = data["breakdown"].get(key)
            cells.append(f"{value:>12.3f}" if value is not None else f"{'-':>12}")
        lines.append("  " + "  ".join(cells))
    else:
        lines.append("Execution accuracy: not available")

    repair_path = out_dir / "repair_report.json"
    if repair_path.exists():
        data = json.loads(repair_path.read_text(encoding="utf-8"))
        summary["repair"] = data
        lines.append(f"Repair: total={data['total']} replaced={data['replaced']} flagged={data['flagged']}")

    stats_path = out_dir / "sft_stats.json"
    if stats_path.exists():
        data = json.loads(stats_path.read_text(encoding="utf-8"))
        summary["augmentation"] = data
        lines.append("Training data lineage")
        for key, value in data.items():
            lines.append(f"  {key}: {value}")

    selections_path = out_dir / "selections.jsonl"
    if selections_path.exists():
        methods: dict[str, int] = {}
        for row in read_artifact(selections_path):
            method = getattr(row, "method", None) or row.get("method", "unknown")
            methods[method] = methods.get(method, 0) + 1
        summary["selection_methods"] = methods
        lines.append(f"Selection methods: {methods}")

    return "\n".join(lines), summary
