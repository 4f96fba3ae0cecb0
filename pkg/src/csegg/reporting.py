"""Report emission: result tables and plot-ready curves from run records.

Everything here is a pure function of run-directory contents, so reports
can be regenerated at any time. Multi-seed runs aggregate as mean and
sample standard deviation per column.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import FormatError
from .metrics import MetricsReport, RecallMatrix

TABLE_COLUMNS = ("Avg.R", "F", "mR", "mF", "FWT", "BWT")


@dataclass(frozen=True)
class ReportBundle:
    table_csv: Path
    table_json: Path
    curves_csv: Path
    summary_txt: Path


def _final_task_row(report: MetricsReport) -> dict[str, float | None]:
    final = report.tasks[-1]
    return {
        "Avg.R": final.avg_recall,
        "F": final.forgetting,
        "mR": final.mean_recall,
        "mF": final.mean_forgetting,
        "FWT": report.fwt,
        "BWT": report.bwt,
    }


def _gen_columns(report: MetricsReport) -> dict[str, float | None]:
    out: dict[str, float | None] = {}
    final_task = max((g.task for g in report.generalization), default=None)
    for g in report.generalization:
        if g.task != final_task:
            continue
        out[f"Gen R_bbox@{g.iou_thresh:.1f}"] = g.recall_bbox
        out[f"Gen R@{g.iou_thresh:.1f}"] = g.recall_rel
    return out


def load_run_report(run_dir: Path, k: int) -> MetricsReport:
    """Rebuild the metrics report of a finished run from its files."""
    from .runner import _report_for

    matrix_path = run_dir / f"matrix_k{k}.json"
    if not matrix_path.exists():
        raise FormatError("run directory has no matrix", path=str(matrix_path))
    with open(matrix_path, encoding="utf-8") as fh:
        matrix = RecallMatrix.from_dict(json.load(fh))
    with open(run_dir / f"mean_matrix_k{k}.json", encoding="utf-8") as fh:
        mean_matrix = RecallMatrix.from_dict(json.load(fh))
    journal = run_dir / "journal.jsonl"
    bucket: dict = {}
    gen: dict = {}
    baselines = None
    if journal.exists():
        with open(journal, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = json.loads(line)
                if event.get("event") == "task_done":
                    bucket[event["task"]] = event["bucket"].get(str(k), {})
                    if event.get("gen"):
                        gen[event["task"]] = event["gen"].get(str(k), {})
                elif event.get("event") == "fwt_done":
                    baselines = {
                        int(i): v for i, v in event["baselines"].get(str(k), {}).items()
                    }
    from .metrics import GenMetrics

    gen_metrics = []
    for t, per_thresh in sorted(gen.items()):
        for thresh_str, vals in sorted(per_thresh.items()):
            gen_metrics.append(
                GenMetrics(task=t, iou_thresh=float(thresh_str),
                           recall_bbox=vals["bbox"], recall_rel=vals["rel"])
            )
    with open(run_dir / "config.json", encoding="utf-8") as fh:
        iou_thresh = json.load(fh).get("iou_thresh", 0.5)
    return _report_for(k, iou_thresh, matrix, mean_matrix, baselines, bucket, gen_metrics)


def seed_dirs(run_dir: Path) -> list[Path]:
    """A run directory is either one run or a parent of seed_* runs."""
    seeds = sorted(p for p in run_dir.glob("seed_*") if p.is_dir())
    return seeds if seeds else [run_dir]


def _mean_sd(values: Sequence[float]) -> tuple[float, float | None]:
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, None
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def _format_cell(mean: float | None, sd: float | None) -> str:
    if mean is None:
        return "-"
    if sd is None:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {sd:.2f}"


def write_report_bundle(run_dir: str | Path, k: int = 20, out_dir: str | Path | None = None) -> ReportBundle:
    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run
    out.mkdir(parents=True, exist_ok=True)
    reports = [load_run_report(d, k) for d in seed_dirs(run)]

    columns = list(TABLE_COLUMNS)
    rows = [_final_task_row(r) for r in reports]
    gen_rows = [_gen_columns(r) for r in reports]
    for extra in sorted({key for g in gen_rows for key in g}):
        columns.append(extra)
        for row, g in zip(rows, gen_rows):
            row[extra] = g.get(extra)

    aggregated: dict[str, dict] = {}
    for col in columns:
        values = [row[col] for row in rows if row.get(col) is not None]
        if values:
            mean, sd = _mean_sd(values)
        else:
            mean, sd = None, None
        aggregated[col] = {"mean": mean, "sd": sd, "n": len(values)}

    table_csv = out / f"table_k{k}.csv"
    with open(table_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerow([_format_cell(aggregated[c]["mean"], aggregated[c]["sd"]) for c in columns])
    table_json = out / f"table_k{k}.json"
    with open(table_json, "w", encoding="utf-8") as fh:
        json.dump({"k": k, "seeds": len(reports), "columns": aggregated}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")

    curves_csv = out / f"curves_k{k}.csv"
    with open(curves_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "task", "R", "Avg.R", "F", "mR", "mF",
                         "head", "body", "tail"])
        for seed_idx, report in enumerate(reports):
            for tm in report.tasks:
                writer.writerow([
                    seed_idx, tm.task,
                    f"{tm.recall:.4f}",
                    f"{tm.avg_recall:.4f}",
                    "" if tm.forgetting is None else f"{tm.forgetting:.4f}",
                    "" if tm.mean_recall is None else f"{tm.mean_recall:.4f}",
                    "" if tm.mean_forgetting is None else f"{tm.mean_forgetting:.4f}",
                    *(
                        "" if tm.bucket_recall.get(b) is None else f"{tm.bucket_recall[b]:.4f}"
                        for b in ("head", "body", "tail")
                    ),
                ])

    summary_txt = out / f"summary_k{k}.txt"
    with open(summary_txt, "w", encoding="utf-8") as fh:
        fh.write(f"run: {run}\nseeds: {len(reports)}  K: {k}\n\n")
        width = max(len(c) for c in columns)
        for col in columns:
            cell = _format_cell(aggregated[col]["mean"], aggregated[col]["sd"])
            fh.write(f"{col:<{width}}  {cell}\n")
        if any(r.generalization for r in reports):
            fh.write("\ngeneralization metrics reported at the final task; "
                     "per-threshold curves in the table columns\n")
    return ReportBundle(table_csv=table_csv, table_json=table_json,
                        curves_csv=curves_csv, summary_txt=summary_txt)
