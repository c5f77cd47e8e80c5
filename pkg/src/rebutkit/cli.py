"""Command-line interface: serve the API, run benchmarks, manage corpora.

The benchmark path writes a report directory: ``report.csv`` (delimited),
``report.md`` (summary), ``report.json`` (raw cells), and PNG figures under
``figures/``.
"""

from __future__ import annotations

import json
import sys
from importlib import resources
from pathlib import Path

import click

from rebutkit.dataset import (
    DatasetError,
    import_openreview_dump,
    load_corpus,
    save_corpus,
)
from rebutkit.evaluation import BenchmarkParadigm, BenchmarkRunner, RebuttalJudge
from rebutkit.gateway import LLMGateway, OpenAICompatBackend, ScriptedBackend
from rebutkit.pipeline import RebuttalPipeline
from rebutkit.records import ContextMode
from rebutkit.retrieval import LiteratureClient, LiteratureError
from rebutkit.session import SessionEngine, SessionStore

PARADIGM_CHOICES = {
    "drg": BenchmarkParadigm.DIRECT,
    "swrg": BenchmarkParadigm.SEGMENT_WISE,
    "sa-predicted": BenchmarkParadigm.STAGED_PREDICTED,
    "sa-gold": BenchmarkParadigm.STAGED_GOLD,
}

CONTEXT_CHOICES = {
    "full-paper": ContextMode.FULL_PAPER,
    "paper-context": ContextMode.PAPER_CONTEXT_ONLY,
    "lit-aug": ContextMode.LITERATURE_AUGMENTED,
}


def build_gateway(backend: str, script_path: str | None) -> LLMGateway:
    if backend == "scripted":
        if script_path:
            script = json.loads(Path(script_path).read_text("utf-8"))
        else:
            script = json.loads(
                resources.files("rebutkit").joinpath("data/demo_script.json").read_text("utf-8")
            )
        return LLMGateway(ScriptedBackend(script))
    return LLMGateway(OpenAICompatBackend())


def build_pipeline(gateway: LLMGateway) -> RebuttalPipeline:
    try:
        literature = LiteratureClient()
    except LiteratureError:
        literature = None  # lit-aug cells will be reported as unsupported
    return RebuttalPipeline(gateway, literature=literature)


@click.group()
def main():
    """Author-in-the-loop rebuttal drafting toolkit."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
@click.option("--token", default=None, help="Bearer token; defaults to REBUTKIT_API_TOKEN.")
@click.option(
    "--backend",
    type=click.Choice(["scripted", "live"]),
    default="scripted",
    show_default=True,
)
@click.option("--script", "script_path", default=None, help="Scripted-backend reply file (JSON).")
@click.option(
    "--data-dir",
    default="rebutkit_sessions",
    show_default=True,
    help="Directory for session event logs and snapshots.",
)
@click.option("--sync-timeout", default=30.0, show_default=True, type=float)
def serve(host, port, token, backend, script_path, data_dir, sync_timeout):
    """Run the REST API (with the companion UI pointed at it)."""
    import uvicorn

    from rebutkit.api import ApiSettings, create_app

    settings = ApiSettings.from_env()
    if token:
        settings.token = token
    settings.sync_timeout_s = sync_timeout
    if not settings.token:
        raise click.UsageError("set --token or REBUTKIT_API_TOKEN")

    gateway = build_gateway(backend, script_path)
    pipeline = build_pipeline(gateway)
    engine = SessionEngine(pipeline, store=SessionStore(data_dir))
    runner = BenchmarkRunner(pipeline, RebuttalJudge(gateway))
    app = create_app(engine, runner=runner, settings=settings)
    click.echo(f"serving on http://{host}:{port} (backend: {backend})")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option(
    "--paradigm",
    default="all",
    show_default=True,
    type=click.Choice([*PARADIGM_CHOICES, "all"]),
)
@click.option(
    "--context",
    default="full-paper",
    show_default=True,
    type=click.Choice([*CONTEXT_CHOICES, "all"]),
)
@click.option(
    "--backend",
    type=click.Choice(["scripted", "live"]),
    default="scripted",
    show_default=True,
)
@click.option("--script", "script_path", default=None, help="Scripted-backend reply file (JSON).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Report directory.")
def benchmark(corpus_path, paradigm, context, backend, script_path, out_dir):
    """Run the evaluation grid over a gold corpus and write the report."""
    from rebutkit.report import write_report_bundle

    try:
        records, stats = load_corpus(corpus_path)
    except DatasetError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"corpus: {stats.n_papers} papers, {stats.n_reviews} reviews, "
        f"{stats.n_segments} segments"
    )

    gateway = build_gateway(backend, script_path)
    pipeline = build_pipeline(gateway)
    runner = BenchmarkRunner(pipeline, RebuttalJudge(gateway))

    paradigms = list(PARADIGM_CHOICES.values()) if paradigm == "all" else [
        PARADIGM_CHOICES[paradigm]
    ]
    contexts = list(CONTEXT_CHOICES.values()) if context == "all" else [
        CONTEXT_CHOICES[context]
    ]
    reports = [runner.run(records, p, c) for p in paradigms for c in contexts]

    written = write_report_bundle(reports, out_dir)
    click.echo(f"wrote {written['csv']}")
    click.echo(f"wrote {written['summary']}")
    click.echo(f"wrote {written['json']}")
    for figure in written["figures"]:
        click.echo(f"wrote {figure}")


@main.command("report")
@click.option("--from-json", "json_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def rerender_report(json_path, out_dir):
    """Re-render the delimited table, summary, and figures from report.json."""
    from rebutkit.evaluation import BenchmarkReport, SegmentResult
    from rebutkit.report import write_report_bundle

    raw = json.loads(Path(json_path).read_text("utf-8"))
    reports = []
    for cell in raw:
        reports.append(
            BenchmarkReport(
                paradigm=BenchmarkParadigm(cell["paradigm"]),
                context_mode=ContextMode(cell["context_mode"]),
                judge_model_id=cell.get("judge_model_id", ""),
                n_segments=cell["n_segments"],
                n_candidates=cell["n_candidates"],
                aspects=cell.get("aspects", {}),
                stage_metrics=cell.get("stage_metrics", {}),
                segments=[
                    SegmentResult(
                        segment_id=s["segment_id"],
                        candidate="present" if s.get("candidate_present") else None,
                        error=s.get("error"),
                        verdicts=s.get("verdicts", {}),
                    )
                    for s in cell.get("segments", ())
                ],
                supported=cell.get("supported", True),
                note=cell.get("note", ""),
            )
        )
    written = write_report_bundle(reports, out_dir)
    click.echo(f"wrote {written['csv']}")
    for figure in written["figures"]:
        click.echo(f"wrote {figure}")


@main.group()
def dataset():
    """Validate, summarize, and import gold corpora."""


@dataset.command()
@click.argument("path", type=click.Path(exists=True))
def validate(path):
    """Validate a corpus file; exits non-zero on any invariant violation."""
    try:
        records, stats = load_corpus(path)
    except DatasetError as exc:
        click.echo(str(exc), err=True)
        sys.exit(1)
    click.echo(
        f"valid: {stats.n_papers} papers, {stats.n_reviews} reviews, "
        f"{stats.n_segments} segments"
    )


@dataset.command()
@click.argument("path", type=click.Path(exists=True))
def stats(path):
    """Print corpus statistics as JSON."""
    try:
        _, corpus_stats = load_corpus(path)
    except DatasetError as exc:
        raise click.ClickException(str(exc))
    click.echo(json.dumps(corpus_stats.to_dict(), indent=2, sort_keys=True))


@dataset.command("import")
@click.argument("export_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option(
    "--backend",
    type=click.Choice(["scripted", "live"]),
    default="scripted",
    show_default=True,
)
@click.option("--script", "script_path", default=None)
def import_export(export_path, out_path, backend, script_path):
    """Turn a raw review/rebuttal export into unlabeled skeleton records."""
    gateway = build_gateway(backend, script_path)
    pipeline = RebuttalPipeline(gateway)
    raw = json.loads(Path(export_path).read_text("utf-8"))
    if not isinstance(raw, list):
        raw = raw.get("papers", [])
    try:
        skeletons = import_openreview_dump(raw, pipeline.segment_review)
        save_corpus(skeletons, out_path)
    except DatasetError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"wrote {len(skeletons)} skeleton record(s) to {out_path}")


if __name__ == "__main__":
    main()
