"""Execution error ratios and repair-iteration statistics.

Counts are the source of truth: percentages are recomputed from the raw
failure/total integers at render time, so aggregation never drifts.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ..corpus import CategoryLabel, TaskSet


class IdMismatchError(KeyError):
    pass


@dataclass(frozen=True)
class RatioCell:
    failures: int
    total: int

    @property
    def percent(self) -> float:
        return 100.0 * self.failures / self.total if self.total else 0.0


@dataclass(frozen=True)
class ErrorRatioTable:
    per_category: dict[CategoryLabel, RatioCell]
    overall: RatioCell


def format_percent(value: float, decimals: int = 2) -> str:
    return f"{value:.{decimals}f}"


def error_ratio(records, tasks: TaskSet) -> ErrorRatioTable:
    """Failure ratio per category and overall; a record fails iff its
    final status is failed.  Denominators count the records present."""
    by_id = tasks.by_id()
    failures: Counter[CategoryLabel] = Counter()
    totals: Counter[CategoryLabel] = Counter()
    for record in records:
        task = by_id.get(record.task_id)
        if task is None:
            raise IdMismatchError(f"record task id {record.task_id!r} not in task set {tasks.name!r}")
        totals[task.category] += 1
        if not record.succeeded:
            failures[task.category] += 1
    per_category = {
        cat: RatioCell(failures=failures.get(cat, 0), total=totals[cat])
        for cat in totals
    }
    overall = RatioCell(failures=sum(failures.values()), total=sum(totals.values()))
    return ErrorRatioTable(per_category=per_category, overall=overall)


def iteration_fix_counts(records) -> dict[int, int]:
    """How many records were first fixed at repair iteration k (k >= 1)."""
    counts = Counter(
        r.iteration_fixed
        for r in records
        if r.succeeded and r.iteration_fixed is not None and r.iteration_fixed >= 1
    )
    return dict(sorted(counts.items()))
