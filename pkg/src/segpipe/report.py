"""Metric report rendering: JSON, per-category CSV, and figure files.

Everything lands under one output directory so a report is a single
self-contained artifact: report.json, report.csv, and PNG charts.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from segpipe.metrics import PQResult, SemanticTally


def semantic_report(tally: SemanticTally, num_images: int) -> dict:
    ious = tally.iou_per_category()
    return {
        "task": "semantic",
        "num_images": num_images,
        "num_categories": tally.num_categories,
        "valid_pixels": tally.valid_pixels,
        "miou": tally.miou(),
        "per_category": [
            {"category": c, "iou": float(iou)} for c, iou in sorted(ious.items())
        ],
    }


def panoptic_report(result: PQResult, num_images: int) -> dict:
    return {
        "task": "panoptic",
        "num_images": num_images,
        "pq": result.pq,
        "sq": result.sq,
        "rq": result.rq,
        "tp": result.tp,
        "fp": result.fp,
        "fn": result.fn,
        "per_category": [
            {
                "category": c,
                "pq": entry.pq,
                "sq": entry.sq,
                "rq": entry.rq,
                "tp": entry.tp,
                "fp": entry.fp,
                "fn": entry.fn,
            }
            for c, entry in sorted(result.per_category.items())
        ],
    }


def write_report(report: dict, out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write report.json + report.csv (+ figures) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(json_path)

    csv_path = out_dir / "report.csv"
    rows = report["per_category"]
    fields = list(rows[0].keys()) if rows else ["category"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    written.append(csv_path)

    if figures:
        written.extend(_render_figures(report, out_dir))
    return written


def _render_figures(report: dict, out_dir: Path) -> list[Path]:
    if report["task"] == "semantic":
        return [
            _bar_chart(
                out_dir / "per_category_iou.png",
                report["per_category"], "iou",
                f"Per-category IoU (mIoU = {report['miou']:.4f})",
            )
        ]
    return [
        _bar_chart(
            out_dir / "per_category_pq.png",
            report["per_category"], "pq",
            f"Per-category PQ (overall PQ = {report['pq']:.4f})",
        )
    ]


def _bar_chart(path: Path, rows: list[dict], key: str, title: str) -> Path:
    categories = [row["category"] for row in rows]
    values = [row[key] for row in rows]
    width = max(4.0, min(16.0, 0.25 * len(rows) + 2.0))
    fig, ax = plt.subplots(figsize=(width, 3.5))
    if rows:
        ax.bar(np.arange(len(rows)), values, color="#4878cf")
        ax.set_xticks(np.arange(len(rows)))
        ax.set_xticklabels([str(c) for c in categories], rotation=90, fontsize=6)
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("category")
    ax.set_ylabel(key)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
