"""Append-only metric logs and plot-data export.

``metrics.csv`` holds only values that are a pure function of the plan and
seed, so two runs of the same plan produce byte-identical files.  Wall-clock
durations go to a separate ``timings.csv``.
"""

from __future__ import annotations

import csv
import io
import os
from collections import defaultdict
from pathlib import Path

import numpy as np

from reprlab.errors import ContractError

METRIC_COLUMNS = ("seed", "frames", "phase", "task", "eval_task", "condition", "metric", "value")
TIMING_COLUMNS = ("seed", "phase_key", "seconds")


def format_value(value) -> str:
    """Shortest round-tripping text for floats; ints and strings as-is."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


class CsvLog:
    """A CSV file opened for appending; every row is flushed immediately so
    the file is valid CSV after any interruption."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = tuple(columns)
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if fresh:
            self._writer.writerow(self.columns)
            self._fh.flush()

    def write(self, row) -> None:
        if len(row) != len(self.columns):
            raise ContractError(f"{self.path.name}: expected {len(self.columns)} fields")
        self._writer.writerow([format_value(v) for v in row])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def count_rows(path) -> int:
    path = Path(path)
    if not path.exists():
        return 0
    with open(path, newline="") as fh:
        return max(0, sum(1 for _ in csv.reader(fh)) - 1)


def truncate_rows(path, keep: int) -> None:
    """Keep the header and the first ``keep`` data rows (resume after a crash)."""
    path = Path(path)
    if not path.exists():
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) - 1 <= keep:
        return
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows[:keep + 1])
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- plot data ---------------------------------------------------------------------
def _metrics_files(run_dir: Path) -> list[Path]:
    direct = run_dir / "metrics.csv"
    if direct.exists():
        return [direct]
    return sorted(run_dir.glob("seed_*/metrics.csv"))


def export_plot_data(run_dir, out_dir=None) -> list[Path]:
    """One CSV per (task, condition): frames, mean, stdev, seed and a task-switch flag.

    Accepts a run directory holding ``seed_*`` subdirectories or a single
    seed directory.  Also writes ``switches.csv`` with the frame at which
    each task's consolidation phase ends.  Output is deterministic.
    """
    run_dir = Path(run_dir)
    files = _metrics_files(run_dir) if run_dir.is_dir() else []
    if not files:
        raise ContractError(f"{run_dir}: no metrics to export")
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)

    curves: dict[tuple[str, str], dict[tuple[int, int], dict[str, str]]] = defaultdict(dict)
    switches: dict[tuple[int, str], int] = {}
    for path in files:
        for r in read_rows(path):
            if r["metric"] == "task_switch":
                switches[(int(r["seed"]), r["task"])] = int(r["frames"])
            if r["metric"] not in ("eval_mean", "eval_std"):
                continue
            key = (r["eval_task"], r["condition"])
            point = curves[key].setdefault((int(r["seed"]), int(r["frames"])), {})
            point[r["metric"]] = r["value"]
    switch_frames = {f for (_, _), f in switches.items()}
    written = []
    for (task, condition), points in sorted(curves.items()):
        path = out_dir / f"curve_{task}_{condition}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["seed", "frames", "mean", "stdev", "task_switch"])
            for (seed, frames), vals in sorted(points.items()):
                w.writerow([seed, frames, vals.get("eval_mean", ""), vals.get("eval_std", ""),
                            int(frames in switch_frames)])
        written.append(path)
    path = out_dir / "switches.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "task", "frames"])
        for (seed, task), frames in sorted(switches.items(), key=lambda kv: (kv[0][0], kv[1])):
            w.writerow([seed, task, frames])
    written.append(path)
    return written
