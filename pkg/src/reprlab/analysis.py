"""Post-hoc analyses: Fisher overlap between tasks and retention of scores."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from reprlab.errors import ContractError

CONSOLIDATION_PHASES = ("ltm", "pr")


def _values(f) -> tuple[np.ndarray, str | None]:
    """Accept a FisherDiagonal, NetworkParams or a bare array."""
    layout = getattr(f, "layout_id", None)
    flat = getattr(f, "flat", f)
    return np.asarray(flat, dtype=np.float64), layout


def unit_trace_normalize(f) -> np.ndarray:
    """F / sum(F) for a diagonal Fisher."""
    v, _ = _values(f)
    if np.any(v < 0):
        raise ContractError("Fisher diagonal has negative entries")
    total = v.sum()
    if not total > 0:
        raise ContractError("cannot normalise an all-zero Fisher diagonal")
    return v / total


def fisher_overlap(f1, f2, normalize: bool = True) -> float:
    """1 - d^2 with d^2 = 1/2 sum_i (sqrt f1_i - sqrt f2_i)^2 on unit-trace diagonals.

    For diagonal matrices the matrix square root in the Frechet distance is
    the elementwise one, so this is the exact closed form.
    """
    v1, l1 = _values(f1)
    v2, l2 = _values(f2)
    if v1.shape != v2.shape or (l1 is not None and l2 is not None and l1 != l2):
        raise ContractError("Fisher diagonals have different layouts")
    if normalize:
        v1, v2 = unit_trace_normalize(v1), unit_trace_normalize(v2)
    d2 = 0.5 * float(np.sum((np.sqrt(v1) - np.sqrt(v2)) ** 2))
    return min(1.0, max(0.0, 1.0 - d2))


@dataclass(frozen=True)
class OverlapReport:
    task_a: str
    task_b: str
    order: str
    overlap: float


def overlap_reports(fishers: Mapping[str, object], order: str = "forward") -> list[OverlapReport]:
    """Overlap for every unordered task pair, in the mapping's task order."""
    names = list(fishers)
    return [OverlapReport(a, b, order, fisher_overlap(fishers[a], fishers[b]))
            for a, b in combinations(names, 2)]


def top_pair(reports: Iterable[OverlapReport]) -> frozenset[str]:
    best = max(reports, key=lambda r: r.overlap)
    return frozenset((best.task_a, best.task_b))


def write_overlap_csv(path, reports: Iterable[OverlapReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_a", "task_b", "order", "overlap"])
        for r in reports:
            w.writerow([r.task_a, r.task_b, r.order, f"{r.overlap:.12f}"])


def retention_metric(current_mean: float, reference_mean: float | None) -> float:
    """Current score over the score at the task's consolidation, floored at 0."""
    if reference_mean is None:
        raise ContractError("retention needs a reference score")
    if reference_mean <= 0:
        raise ContractError(f"reference score must be positive, got {reference_mean}")
    return max(0.0, float(current_mean) / float(reference_mean))


def retention_from_log(rows: Iterable[Mapping[str, str]], task: str, *, seed: int | None = None,
                       condition: str | None = None) -> float:
    """Retention of ``task`` in a metrics log.

    The reference is the task's last evaluation during its own consolidation
    phase (``ltm``, or ``pr`` for the single-network condition); the current
    value is the last evaluation in the log.
    """
    ref = None
    cur = None
    for r in rows:
        if r.get("metric") != "eval_mean" or r.get("eval_task") != task:
            continue
        if seed is not None and int(r["seed"]) != seed:
            continue
        if condition is not None and r.get("condition") != condition:
            continue
        v = float(r["value"])
        if r.get("task") == task and r.get("phase") in CONSOLIDATION_PHASES:
            ref = v
        cur = v
    return retention_metric(cur if cur is not None else 0.0, ref)
