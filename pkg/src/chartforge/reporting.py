"""Pure table views over a finished run directory.

Every number here is a function of the recorded artifacts (records plus
the task snapshot and verdict files written at run time); rendering twice
yields identical bytes.  Percentages render with 2 decimals, similarity
scores with 3, judge/audit summaries with 1.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .corpus import CATEGORY_TITLES, CategoryLabel, TaskSet
from .metrics import (
    EmptySourceError,
    codebleu,
    error_ratio,
    format_percent,
    image_quality_suite,
    iteration_fix_counts,
    lex_source,
    meteor,
)
from .metrics.ssim import SsimParams
from .sandbox import error_histogram


class MissingInputsError(Exception):
    """The requested table needs artifacts the run does not have."""


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [dict(zip(self.columns, row)) for row in self.rows]
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"

    def render(self, fmt: str = "csv") -> str:
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown format {fmt!r}")


_T2C31_ORDER = (
    CategoryLabel.PAIRWISE,
    CategoryLabel.STATISTICAL_DISTRIBUTION,
    CategoryLabel.GRIDDED,
    CategoryLabel.IRREGULARLY_GRIDDED,
    CategoryLabel.THREE_D_VOLUMETRIC,
)
_CHARTX_ORDER = (
    CategoryLabel.GENERAL,
    CategoryLabel.FINE_GRAINED,
    CategoryLabel.SPECIFIC,
)
# The published error tables fold the two gridded categories into one
# "(Irregularly) gridded" column; the renderer follows that structure.
_GRIDDED_MERGE = (CategoryLabel.GRIDDED, CategoryLabel.IRREGULARLY_GRIDDED)


def error_table(records, tasks: TaskSet, label: str = "run") -> Table:
    ratio = error_ratio(records, tasks)
    present = set(ratio.per_category)

    columns: list[str] = ["Model"]
    cells: list[str] = [label]

    def add(title: str, cats: tuple[CategoryLabel, ...]) -> None:
        member = [c for c in cats if c in present]
        if not member:
            return
        failures = sum(ratio.per_category[c].failures for c in member)
        total = sum(ratio.per_category[c].total for c in member)
        columns.append(title)
        cells.append(format_percent(100.0 * failures / total if total else 0.0))

    ordered: list[tuple[str, tuple[CategoryLabel, ...]]] = []
    for cat in _T2C31_ORDER:
        if cat in _GRIDDED_MERGE:
            continue
        ordered.append((CATEGORY_TITLES[cat], (cat,)))
        if cat == CategoryLabel.STATISTICAL_DISTRIBUTION:
            ordered.append(("(Irregularly) gridded", _GRIDDED_MERGE))
    for cat in _CHARTX_ORDER:
        ordered.append((CATEGORY_TITLES[cat], (cat,)))
    ordered.append((CATEGORY_TITLES[CategoryLabel.UNKNOWN], (CategoryLabel.UNKNOWN,)))

    for title, cats in ordered:
        add(title, cats)
    columns.append("Total")
    cells.append(format_percent(ratio.overall.percent))
    return Table(columns=tuple(columns), rows=(tuple(cells),))


def iterations_table(records, max_iterations: int | None = None) -> Table:
    counts = iteration_fix_counts(records)
    highest = max_iterations or max(counts, default=0)
    columns = tuple(str(i) for i in range(1, highest + 1))
    row = tuple(str(counts.get(i, 0)) for i in range(1, highest + 1))
    return Table(columns=("Fixed at iteration",) + columns, rows=((("count",) + row),))


def errors_topk_table(records, iteration: int = 0, k: int = 3) -> Table:
    histogram = error_histogram(records, iteration)
    rows = tuple(
        (key, str(count)) for key, count in list(histogram.items())[:k]
    )
    return Table(columns=("Error", "Count"), rows=rows)


def similarity_table(records, tasks: TaskSet, label: str = "run", per_task: bool = False) -> Table:
    by_id = tasks.by_id()
    scored: list[tuple[str, float, float]] = []
    for record in records:
        task = by_id.get(record.task_id)
        script = record.final_script
        if task is None or task.reference_code is None or script is None:
            continue
        try:
            cand_tokens = lex_source(script.code)
            ref_tokens = lex_source(task.reference_code)
            if not cand_tokens or not ref_tokens:
                continue
            meteor_score = meteor(cand_tokens, ref_tokens)
            codebleu_score = codebleu(script.code, task.reference_code).score
        except EmptySourceError:
            continue
        scored.append((record.task_id, meteor_score, codebleu_score))
    if not scored:
        raise MissingInputsError("no records with reference code to score")
    if per_task:
        rows = tuple(
            (task_id, f"{m:.3f}", f"{c:.3f}") for task_id, m, c in scored
        )
        return Table(columns=("Task", "METEOR", "CodeBLEU"), rows=rows)
    mean_meteor = sum(m for _, m, _ in scored) / len(scored)
    mean_codebleu = sum(c for _, _, c in scored) / len(scored)
    return Table(
        columns=("Model", "METEOR", "CodeBLEU", "Pairs"),
        rows=((label, f"{mean_meteor:.3f}", f"{mean_codebleu:.3f}", str(len(scored))),),
    )


def image_table(
    records,
    tasks: TaskSet,
    label: str = "run",
    judge_scores: dict[str, int] | None = None,
    params: SsimParams = SsimParams(),
) -> Table:
    if not any(t.reference_image is not None for t in tasks.tasks):
        raise MissingInputsError("no reference images in the task snapshot")
    result = image_quality_suite(records, tasks, params)
    if result.mean is None:
        raise MissingInputsError("no (generated, reference) image pairs to score")
    columns = ["Model", "SSIM", "Pairs"]
    row = [label, f"{result.mean:.3f}", str(result.participating)]
    if judge_scores:
        mean_judge = sum(judge_scores.values()) / len(judge_scores)
        columns[2:2] = ["MM-LLM judge", "Judged"]
        row[2:2] = [f"{mean_judge:.1f}", str(len(judge_scores))]
    return Table(columns=tuple(columns), rows=(tuple(row),))


def audit_table(verdicts: dict[str, str], label: str = "run") -> Table:
    scored = [v for v in verdicts.values() if v in ("appropriate", "not_appropriate")]
    appropriate = sum(1 for v in scored if v == "appropriate")
    if not scored:
        raise MissingInputsError("no scored accessibility verdicts")
    rate = 100.0 * appropriate / len(scored)
    return Table(
        columns=("Model", "Appropriate", "Participating", "Pass rate %"),
        rows=((label, str(appropriate), str(len(scored)), f"{rate:.1f}"),),
    )
