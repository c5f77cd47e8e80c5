"""Benchmark report emission: delimited table, summary, and figures.

``write_report_bundle`` lays one benchmark run (one or more grid cells)
out as ``report.csv`` (machine-readable), ``report.md`` (human-readable
summary), ``report.json`` (raw cells, re-renderable), and PNG figures under
``figures/``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from rebutkit.evaluation import Aspect, BenchmarkParadigm, BenchmarkReport
from rebutkit.records import ContextMode

PARADIGM_LABELS = {
    BenchmarkParadigm.DIRECT: "Direct",
    BenchmarkParadigm.SEGMENT_WISE: "Segment-wise",
    BenchmarkParadigm.STAGED_PREDICTED: "Staged (predicted labels)",
    BenchmarkParadigm.STAGED_GOLD: "Staged (gold labels)",
}

CONTEXT_LABELS = {
    ContextMode.FULL_PAPER: "Full paper",
    ContextMode.PAPER_CONTEXT_ONLY: "Paper context only",
    ContextMode.LITERATURE_AUGMENTED: "Literature-augmented",
}

ASPECT_LABELS = {
    Aspect.STRENGTH_OF_REFUTATION: "Strength of refutation",
    Aspect.FACTUAL_CORRECTNESS: "Factual correctness",
    Aspect.CONSISTENCY: "Consistency",
}

CSV_COLUMNS = [
    "paradigm",
    "context_mode",
    "n_segments",
    "n_candidates",
    "coverage",
    "strength_of_refutation",
    "factual_correctness",
    "consistency",
    "judge_model_id",
    "supported",
    "note",
]


def _cell(report: BenchmarkReport, aspect: Aspect) -> str:
    if not report.supported:
        return "--"
    entry = report.aspects.get(aspect.value) or {}
    precision = entry.get("precision")
    return f"{precision:.2f}" if precision is not None else "--"


def report_rows(reports: Sequence[BenchmarkReport]) -> list[dict]:
    rows = []
    for report in reports:
        rows.append(
            {
                "paradigm": report.paradigm.value,
                "context_mode": report.context_mode.value,
                "n_segments": report.n_segments,
                "n_candidates": report.n_candidates,
                "coverage": f"{report.coverage:.3f}",
                "strength_of_refutation": _cell(report, Aspect.STRENGTH_OF_REFUTATION),
                "factual_correctness": _cell(report, Aspect.FACTUAL_CORRECTNESS),
                "consistency": _cell(report, Aspect.CONSISTENCY),
                "judge_model_id": report.judge_model_id,
                "supported": str(report.supported).lower(),
                "note": report.note,
            }
        )
    return rows


def write_csv(reports: Sequence[BenchmarkReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(report_rows(reports))
    return path


def write_json(reports: Sequence[BenchmarkReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, ensure_ascii=False, sort_keys=True),
        "utf-8",
    )
    return path


def write_summary(reports: Sequence[BenchmarkReport], path: Union[str, Path]) -> Path:
    lines = ["# Benchmark report", ""]
    contexts = []
    for report in reports:
        if report.context_mode not in contexts:
            contexts.append(report.context_mode)
    by_cell = {(r.paradigm, r.context_mode): r for r in reports}
    paradigms = []
    for report in reports:
        if report.paradigm not in paradigms:
            paradigms.append(report.paradigm)

    for aspect in Aspect:
        lines.append(f"## {ASPECT_LABELS[aspect]} (segment-level precision)")
        lines.append("")
        header = "| Approach | " + " | ".join(CONTEXT_LABELS[c] for c in contexts) + " |"
        lines.append(header)
        lines.append("|" + "---|" * (len(contexts) + 1))
        for paradigm in paradigms:
            cells = []
            for context in contexts:
                report = by_cell.get((paradigm, context))
                cells.append(_cell(report, aspect) if report else "")
            lines.append(f"| {PARADIGM_LABELS[paradigm]} | " + " | ".join(cells) + " |")
        lines.append("")

    staged = [r for r in reports if r.stage_metrics]
    if staged:
        lines.append("## Staged-pipeline step metrics (precision/recall/F1)")
        lines.append("")
        lines.append("| Context | Step | Precision | Recall | F1 |")
        lines.append("|---|---|---|---|---|")
        for report in staged:
            for stage, metrics in report.stage_metrics.items():
                lines.append(
                    f"| {CONTEXT_LABELS[report.context_mode]} | {stage} "
                    f"| {metrics['precision']:.2f} | {metrics['recall']:.2f} "
                    f"| {metrics['f1']:.2f} |"
                )
        lines.append("")

    lines.append("## Coverage")
    lines.append("")
    lines.append("| Approach | Context | Segments | Candidates | Coverage | Judge |")
    lines.append("|---|---|---|---|---|---|")
    for report in reports:
        lines.append(
            f"| {PARADIGM_LABELS[report.paradigm]} | {CONTEXT_LABELS[report.context_mode]} "
            f"| {report.n_segments} | {report.n_candidates} | {report.coverage:.2f} "
            f"| {report.judge_model_id} |"
        )
    notes = [r for r in reports if r.note]
    if notes:
        lines.append("")
        for report in notes:
            lines.append(
                f"- {PARADIGM_LABELS[report.paradigm]} / "
                f"{CONTEXT_LABELS[report.context_mode]}: {report.note}"
            )
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", "utf-8")
    return path


def render_figures(reports: Sequence[BenchmarkReport], fig_dir: Union[str, Path]) -> list[Path]:
    """Render one grouped-bar figure per aspect plus a stage-metrics figure."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    paradigms = []
    contexts = []
    for report in reports:
        if report.paradigm not in paradigms:
            paradigms.append(report.paradigm)
        if report.context_mode not in contexts:
            contexts.append(report.context_mode)
    by_cell = {(r.paradigm, r.context_mode): r for r in reports}

    for aspect in Aspect:
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        width = 0.8 / max(1, len(contexts))
        for ci, context in enumerate(contexts):
            xs, ys = [], []
            for pi, paradigm in enumerate(paradigms):
                report = by_cell.get((paradigm, context))
                if report is None or not report.supported:
                    continue
                precision = (report.aspects.get(aspect.value) or {}).get("precision")
                if precision is None:
                    continue
                xs.append(pi + ci * width)
                ys.append(precision)
            if xs:
                ax.bar(xs, ys, width=width, label=CONTEXT_LABELS[context])
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(paradigms))])
        ax.set_xticklabels([PARADIGM_LABELS[p] for p in paradigms], fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("precision")
        ax.set_title(ASPECT_LABELS[aspect])
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = fig_dir / f"{aspect.value}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)

    staged = [r for r in reports if r.stage_metrics]
    if staged:
        fig, ax = plt.subplots(figsize=(7.0, 4.0))
        stages = ["dp", "etp", "rap"]
        metric_names = ["precision", "recall", "f1"]
        report = staged[0]
        width = 0.8 / len(metric_names)
        for mi, metric in enumerate(metric_names):
            xs, ys = [], []
            for si, stage in enumerate(stages):
                entry = report.stage_metrics.get(stage)
                if entry is None:
                    continue
                xs.append(si + mi * width)
                ys.append(entry[metric])
            if xs:
                ax.bar(xs, ys, width=width, label=metric)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(stages))])
        ax.set_xticklabels(stages)
        ax.set_ylim(0, 1.05)
        ax.set_title("Staged-pipeline step metrics")
        ax.legend(fontsize=8)
        fig.tight_layout()
        out = fig_dir / "stage_metrics.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def write_report_bundle(
    reports: Sequence[BenchmarkReport], out_dir: Union[str, Path]
) -> dict[str, object]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return {
        "csv": write_csv(reports, out_dir / "report.csv"),
        "summary": write_summary(reports, out_dir / "report.md"),
        "json": write_json(reports, out_dir / "report.json"),
        "figures": render_figures(reports, out_dir / "figures"),
    }
