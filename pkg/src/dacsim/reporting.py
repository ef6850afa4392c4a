"""Summaries over stored run artifacts.

``report`` scans a results directory for run folders (anything containing an
``accuracy.csv`` with a ``config.echo`` next to it), groups runs by protocol,
averages per-cluster accuracies over seeds and prints one table row per
protocol with the over-cluster mean and standard deviation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import parse_config
from .errors import ConfigurationError, IngestionError


@dataclass
class RunRecord:
    protocol: str
    seed: int
    cluster_accuracies: list[float]


def _load_run(accuracy_path: Path) -> RunRecord:
    echo_path = accuracy_path.parent / "config.echo"
    if not echo_path.exists():
        raise IngestionError(f"{accuracy_path}: no config.echo next to it")
    try:
        config = parse_config(echo_path)
    except ConfigurationError as exc:
        raise IngestionError(str(exc)) from exc

    by_cluster: dict[int, list[float]] = {}
    try:
        with open(accuracy_path, newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            for row in reader:
                by_cluster.setdefault(int(row["cluster_id"]), []).append(
                    float(row["test_accuracy"])
                )
    except (ValueError, KeyError, TypeError) as exc:
        raise IngestionError(f"{accuracy_path}: malformed accuracy file: {exc}") from exc
    if not by_cluster:
        raise IngestionError(f"{accuracy_path}: no rows")

    clusters = sorted(by_cluster)
    if clusters != list(range(len(clusters))):
        raise IngestionError(f"{accuracy_path}: cluster ids are not contiguous")
    return RunRecord(
        protocol=config.protocol,
        seed=config.seed,
        cluster_accuracies=[float(np.mean(by_cluster[c])) for c in clusters],
    )


@dataclass
class SummaryRow:
    protocol: str
    n_runs: int
    cluster_accuracies: list[float]  # averaged over runs
    mean: float
    std: float


def summarize_results(results_dir: str | Path) -> list[SummaryRow]:
    root = Path(results_dir)
    paths = sorted(root.rglob("accuracy.csv"))
    if not paths:
        raise IngestionError(f"{root}: no accuracy.csv files found")
    runs = [_load_run(p) for p in paths]

    n_clusters = len(runs[0].cluster_accuracies)
    for p, run in zip(paths, runs):
        if len(run.cluster_accuracies) != n_clusters:
            raise IngestionError(
                f"{p}: has {len(run.cluster_accuracies)} clusters, "
                f"other runs have {n_clusters}"
            )

    rows = []
    for protocol in sorted({r.protocol for r in runs}):
        group = [r for r in runs if r.protocol == protocol]
        averaged = np.mean([r.cluster_accuracies for r in group], axis=0)
        rows.append(
            SummaryRow(
                protocol=protocol,
                n_runs=len(group),
                cluster_accuracies=[float(v) for v in averaged],
                mean=float(np.mean(averaged)),
                std=float(np.std(averaged)),
            )
        )
    return rows


def format_table(rows: list[SummaryRow]) -> str:
    n_clusters = len(rows[0].cluster_accuracies)
    headers = ["protocol", "n"] + [f"cluster_{c}" for c in range(n_clusters)] + ["mean", "std"]
    cells = [headers]
    for row in rows:
        cells.append(
            [row.protocol, str(row.n_runs)]
            + [f"{v:.4f}" for v in row.cluster_accuracies]
            + [f"{row.mean:.4f}", f"{row.std:.4f}"]
        )
    widths = [max(len(line[col]) for line in cells) for col in range(len(headers))]
    lines = []
    for line in cells:
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip())
    return "\n".join(lines)


def write_summary_csv(rows: list[SummaryRow], path: str | Path) -> None:
    n_clusters = len(rows[0].cluster_accuracies)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ["protocol", "n_runs"]
            + [f"cluster_{c}" for c in range(n_clusters)]
            + ["mean", "std"]
        )
        for row in rows:
            writer.writerow(
                [row.protocol, row.n_runs]
                + [repr(v) for v in row.cluster_accuracies]
                + [repr(row.mean), repr(row.std)]
            )
