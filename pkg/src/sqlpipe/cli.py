"""Command-line front door: one command per pipeline stage.

Exit codes: 0 success, 1 stage failure, 2 configuration error. Logs go to
stderr; machine-readable output goes to files only.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import build_gateway, config_hash, load_config
from .datasets import QuestionArtifact, load_dataset, write_artifact
from .errors import ConfigError, SqlPipeError, StageError
from .manifest import RunManifest
from . import stages

logger = logging.getLogger(__name__)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Pipeline config YAML.")
@click.option("--resume", is_flag=True, help="Skip stages whose recorded hashes still match.")
@click.option("--record", is_flag=True, help="Record judge transcripts to the configured store.")
@click.option("--verbose", is_flag=True)
@click.pass_context
def cli(ctx: click.Context, config_path: str, resume: bool, record: bool, verbose: bool):
    _setup_logging(verbose)
    cfg = load_config(config_path)
    if record:
        cfg.record = True
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    ctx.obj = {"cfg": cfg, "resume": resume}


def _stage(ctx: click.Context, name: str, inputs: list, outputs: list, fn) -> None:
    cfg = ctx.obj["cfg"]
    manifest_path = cfg.out_dir / "manifest.json"
    manifest = RunManifest.load_or_create(manifest_path, config_hash(cfg.raw))
    try:
        ran = manifest.run_stage(name, inputs, outputs, fn, resume=ctx.obj["resume"])
    finally:
        manifest.save(manifest_path)
    click.echo(f"{name}: {'done' if ran else 'skipped (resume)'}", err=True)


_format_option = click.option("--format", "source_format", type=click.Choice(["bird", "spider"]), default="bird")


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def ingest(ctx, dataset, source_format, out_path):
    """Validate a source dataset and write it as a record artifact."""

    def run():
        split = load_dataset(dataset, source_format)
        write_artifact([QuestionArtifact(record=r) for r in split.records], out_path)
        click.echo(f"loaded {len(split.records)} records from {dataset}", err=True)

    _stage(ctx, "ingest", [dataset], [out_path], run)


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--db-root", default=None, type=click.Path(), help="Override the configured db_root.")
@click.option("--scorer", default="lexical", type=click.Choice(["lexical"]), show_default=True)
@click.option("--judge", default=None, help="Judge model for keyword extraction and second filter.")
@click.option("--top-n-tables", default=None, type=int)
@click.option("--top-n-columns", default=None, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def link(ctx, dataset, source_format, db_root, scorer, judge, top_n_tables, top_n_columns, out_path):
    """Run the four-step schema linking over a dataset."""
    cfg = ctx.obj["cfg"]
    if db_root:
        cfg.db_root = Path(db_root)
    if judge:
        cfg.default_judge = judge
    if top_n_tables or top_n_columns:
        from .linking import LinkConfig

        cfg.link = LinkConfig(
            top_n_tables=top_n_tables or cfg.link.top_n_tables,
            top_n_columns_per_table=top_n_columns or cfg.link.top_n_columns_per_table,
            bm25_k1=cfg.link.bm25_k1,
            bm25_b=cfg.link.bm25_b,
            min_substring_len=cfg.link.min_substring_len,
            max_matched_values=cfg.link.max_matched_values,
        )
    gateway = build_gateway(cfg)
    _stage(ctx, "link", [dataset], [out_path],
           lambda: stages.stage_link(cfg, gateway, dataset, source_format, out_path))


@cli.command()
@click.option("--pairs", required=True, type=click.Path(exists=True))
@click.option("--mode", required=True, type=click.Choice(["query_diffusion", "example_diffusion", "repair", "synthesis"]))
@click.option("--judges", default=None, help="Comma-separated judge model names (odd count).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def verify(ctx, pairs, mode, judges, out_path):
    """Verify query-SQL pairs; emits VerdictBundle JSON Lines."""
    cfg = ctx.obj["cfg"]
    if judges:
        cfg.judges = [j.strip() for j in judges.split(",") if j.strip()]
    gateway = build_gateway(cfg)
    _stage(ctx, "verify", [pairs], [out_path],
           lambda: stages.stage_verify(cfg, gateway, pairs, mode, out_path))


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--drop-flagged", is_flag=True, help="Drop records whose gold and prediction both fail.")
@click.pass_context
def repair(ctx, dataset, source_format, pred, out_path, drop_flagged):
    """Adaptive data repair: replace gold SQL the verifier rejects."""
    cfg = ctx.obj["cfg"]
    gateway = build_gateway(cfg)
    decisions = cfg.out_dir / "repair_decisions.jsonl"
    report = cfg.out_dir / "repair_report.json"

    def run():
        result = stages.stage_repair(
            cfg, gateway, dataset, source_format, pred, out_path, decisions, report, drop_flagged
        )
        click.echo(f"replaced={result.replaced} flagged={result.flagged}", err=True)

    _stage(ctx, "repair", [dataset, pred], [out_path, decisions, report], run)


@cli.command()
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--strategy", "strategies", multiple=True,
              type=click.Choice(["query", "example", "sql2query", "query2sql", "hyb"]), default=("query",))
@click.option("--generator", default=None)
@click.option("--k", default=None, type=int)
@click.option("--iteration", default=1, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def augment(ctx, dataset, source_format, pred, strategies, generator, k, iteration, out_path):
    """Diffuse and synthesize training pairs from prediction errors."""
    cfg = ctx.obj["cfg"]
    if generator:
        cfg.default_generator = generator
    gateway = build_gateway(cfg)
    _stage(ctx, "augment", [dataset, pred], [out_path],
           lambda: stages.stage_augment(cfg, gateway, dataset, source_format, pred,
                                        list(strategies), out_path, iteration=iteration, k=k))


@cli.command("build-sft")
@click.option("--original", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--augmented", "augmented_paths", multiple=True, type=click.Path(exists=True))
@click.option("--link-results", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--iteration", default=1, type=int)
@click.pass_context
def build_sft(ctx, original, source_format, augmented_paths, link_results, out_path, iteration):
    """Combine originals and accepted augmented pairs into an SFT file."""
    cfg = ctx.obj["cfg"]
    stats = cfg.out_dir / "sft_stats.json"

    def run():
        sft = stages.stage_build_sft(
            cfg, original, source_format, list(augmented_paths), link_results, out_path, stats, iteration
        )
        click.echo(f"sft examples: {sft.lineage['total']}", err=True)

    _stage(ctx, "build-sft", [original, *augmented_paths], [out_path, stats], run)


@cli.command()
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--link-results", default=None, type=click.Path(exists=True))
@click.option("--judge", default=None)
@click.option("--max-syntax-rounds", default=2, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-candidates", "out_candidates", required=True, type=click.Path())
@click.pass_context
def correct(ctx, candidates, dataset, source_format, link_results, judge, max_syntax_rounds, out_path, out_candidates):
    """Two-step semantic correction followed by syntax correction."""
    cfg = ctx.obj["cfg"]
    if judge:
        cfg.default_judge = judge
    gateway = build_gateway(cfg)
    _stage(ctx, "correct", [candidates, dataset], [out_path, out_candidates],
           lambda: stages.stage_correct(cfg, gateway, candidates, dataset, source_format,
                                        link_results, out_path, out_candidates, max_syntax_rounds))


@cli.command()
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--link-results", default=None, type=click.Path(exists=True))
@click.option("--judge", default=None)
@click.option("--fallback", type=click.Choice(["judge", "vote"]), default="judge", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-pred", "out_pred", required=True, type=click.Path())
@click.pass_context
def ensemble(ctx, candidates, dataset, source_format, link_results, judge, fallback, out_path, out_pred):
    """Select one SQL per record from execution-grouped candidates."""
    cfg = ctx.obj["cfg"]
    if judge:
        cfg.default_judge = judge
    gateway = build_gateway(cfg)
    _stage(ctx, "ensemble", [candidates, dataset], [out_path, out_pred],
           lambda: stages.stage_ensemble(cfg, gateway, candidates, dataset, source_format,
                                         link_results, out_path, out_pred, fallback))


@cli.command("build-choice-sft")
@click.option("--candidates", required=True, type=click.Path(exists=True))
@click.option("--gold", "dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--link-results", default=None, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def build_choice_sft(ctx, candidates, dataset, source_format, link_results, out_path):
    """Build the selection-model training file (option prompt + gold letter)."""
    cfg = ctx.obj["cfg"]
    report = cfg.out_dir / "choice_report.json"

    def run():
        result = stages.stage_build_choice_sft(
            cfg, candidates, dataset, source_format, link_results, out_path, report
        )
        click.echo(f"choice examples: {result.emitted}", err=True)

    _stage(ctx, "build-choice-sft", [candidates, dataset], [out_path, report], run)


@cli.command("eval")
@click.option("--gold", "dataset", required=True, type=click.Path(exists=True))
@_format_option
@click.option("--pred", required=True, type=click.Path(exists=True))
@click.option("--db-root", default=None, type=click.Path())
@click.option("--timeout-ms", default=None, type=int)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_context
def eval_cmd(ctx, dataset, source_format, pred, db_root, timeout_ms, out_path):
    """Execution Accuracy of a predictions file against gold."""
    cfg = ctx.obj["cfg"]
    if db_root:
        cfg.db_root = Path(db_root)
    if timeout_ms:
        cfg.timeout_ms = timeout_ms
    out_path = out_path or str(cfg.out_dir / "eval_report.json")

    def run():
        payload = stages.stage_eval(cfg, dataset, source_format, pred, out_path)
        click.echo(f"EX total: {payload['total_ex']:.3f}", err=True)

    _stage(ctx, "eval", [dataset, pred], [out_path], run)


@cli.command()
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_context
def report(ctx, out_path):
    """Human-readable summary of everything the run produced so far."""
    cfg = ctx.obj["cfg"]
    text, summary = stages.render_report(cfg.out_dir)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")


def main() -> None:
    try:
        cli(standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except StageError as exc:
        click.echo(f"{exc}", err=True)
        sys.exit(1)
    except SqlPipeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(1)


if __name__ == "__main__":
    main()
