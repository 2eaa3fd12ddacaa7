"""Benchmark task loading.

A task set lives on disk as one JSON-lines file per split, one record per
task.  The canonical record schema is::

    {"id": ..., "description": ..., "category": ...,
     "data_files": [{"name": ..., "content": ...}],
     "reference_code": ..., "reference_image_path": ...}

Reference images are PNG files addressed by a path relative to the JSONL
file.  A ``LayoutSpec`` maps the canonical field names onto the field names
a particular dataset export uses; two layouts ship built in ("t2c31" and
"chartx").
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath


class CategoryLabel(Enum):
    PAIRWISE = "pairwise"
    STATISTICAL_DISTRIBUTION = "statistical_distribution"
    GRIDDED = "gridded"
    IRREGULARLY_GRIDDED = "irregularly_gridded"
    THREE_D_VOLUMETRIC = "3d_volumetric"
    GENERAL = "general"
    FINE_GRAINED = "fine_grained"
    SPECIFIC = "specific"
    UNKNOWN = "unknown"


# Human-readable column headings used by the report renderers.
CATEGORY_TITLES = {
    CategoryLabel.PAIRWISE: "Pairwise",
    CategoryLabel.STATISTICAL_DISTRIBUTION: "Statistical distribution",
    CategoryLabel.GRIDDED: "Gridded",
    CategoryLabel.IRREGULARLY_GRIDDED: "Irregularly gridded",
    CategoryLabel.THREE_D_VOLUMETRIC: "3D and Volumetric",
    CategoryLabel.GENERAL: "General",
    CategoryLabel.FINE_GRAINED: "Fine-Grained",
    CategoryLabel.SPECIFIC: "Specific",
    CategoryLabel.UNKNOWN: "Unknown",
}

_CATEGORY_ALIASES = {
    "pairwise": CategoryLabel.PAIRWISE,
    "statisticaldistribution": CategoryLabel.STATISTICAL_DISTRIBUTION,
    "statistical": CategoryLabel.STATISTICAL_DISTRIBUTION,
    "gridded": CategoryLabel.GRIDDED,
    "irregularlygridded": CategoryLabel.IRREGULARLY_GRIDDED,
    "3dandvolumetric": CategoryLabel.THREE_D_VOLUMETRIC,
    "3dvolumetric": CategoryLabel.THREE_D_VOLUMETRIC,
    "general": CategoryLabel.GENERAL,
    "finegrained": CategoryLabel.FINE_GRAINED,
    "specific": CategoryLabel.SPECIFIC,
    "unknown": CategoryLabel.UNKNOWN,
}


def category_of(raw_label: str) -> CategoryLabel:
    """Map a raw category string onto the closed label set.

    Matching is insensitive to case, whitespace, and punctuation, and a
    trailing "chart(s)" is ignored.  Anything unrecognized maps to
    ``UNKNOWN``; this function never raises.
    """
    key = re.sub(r"[^a-z0-9]+", "", raw_label.lower())
    key = re.sub(r"charts?$", "", key)
    return _CATEGORY_ALIASES.get(key, CategoryLabel.UNKNOWN)


class CorpusError(Exception):
    """Base class for task-set loading failures."""


class MissingFieldError(CorpusError):
    def __init__(self, record_id: str, field_name: str):
        super().__init__(f"record {record_id!r} lacks required field {field_name!r}")
        self.record_id = record_id
        self.field_name = field_name


class MalformedRecordError(CorpusError):
    def __init__(self, line_number: int, reason: str):
        super().__init__(f"malformed record at line {line_number}: {reason}")
        self.line_number = line_number


def _check_relative(name: str) -> str:
    p = PurePosixPath(name)
    if p.is_absolute() or ".." in p.parts or name.startswith("~") or not name:
        raise ValueError(f"data file name {name!r} must be a relative path without traversal")
    return name


@dataclass(frozen=True)
class ChartTask:
    """One benchmark record.

    ``description`` may embed a CSV preview verbatim; the full CSV contents
    travel separately in ``data_files`` so the sandbox can materialize them.
    ``raw_category`` preserves the on-disk label verbatim even when it does
    not map onto the closed category set.
    """

    id: str
    description: str
    category: CategoryLabel
    data_files: tuple[tuple[str, str], ...] = ()
    reference_code: str | None = None
    reference_image: bytes | None = None
    raw_category: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("task id must be non-empty")
        if not self.description:
            raise ValueError(f"task {self.id!r}: description must be non-empty")
        for name, _content in self.data_files:
            _check_relative(name)


@dataclass(frozen=True)
class TaskSet:
    name: str
    tasks: tuple[ChartTask, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for t in self.tasks:
            if t.id in seen:
                raise ValueError(f"duplicate task id {t.id!r} in task set {self.name!r}")
            seen.add(t.id)

    @property
    def counts_by_category(self) -> dict[CategoryLabel, int]:
        return dict(Counter(t.category for t in self.tasks))

    def __len__(self) -> int:
        return len(self.tasks)

    def by_id(self) -> dict[str, ChartTask]:
        return {t.id: t for t in self.tasks}


@dataclass(frozen=True)
class LayoutSpec:
    """Field-name mapping from the canonical record schema to an export."""

    name: str
    id_field: str = "id"
    description_field: str = "description"
    category_field: str = "category"
    data_files_field: str = "data_files"
    reference_code_field: str = "reference_code"
    reference_image_path_field: str = "reference_image_path"


T2C31_LAYOUT = LayoutSpec(name="t2c31")
CHARTX_LAYOUT = LayoutSpec(
    name="chartx",
    id_field="imgname",
    description_field="description",
    category_field="type",
    data_files_field="csv_files",
    reference_code_field="code",
    reference_image_path_field="img_path",
)

LAYOUTS = {"t2c31": T2C31_LAYOUT, "chartx": CHARTX_LAYOUT}


def get_layout(name: str) -> LayoutSpec:
    try:
        return LAYOUTS[name]
    except KeyError:
        raise ValueError(f"unknown layout {name!r}; expected one of {sorted(LAYOUTS)}") from None


def load_taskset(path: str | Path, layout: LayoutSpec = T2C31_LAYOUT) -> TaskSet:
    """Load a JSONL split into a TaskSet, preserving file order.

    Raises MalformedRecordError on unparseable lines and MissingFieldError
    when a record lacks its id or description; both name the offending
    record so the caller can fix the input rather than silently skip it.
    """
    path = Path(path)
    base = path.parent
    tasks: list[ChartTask] = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, str(exc)) from exc
            if not isinstance(raw, dict):
                raise MalformedRecordError(line_no, "record is not a JSON object")
            tasks.append(_task_from_record(raw, layout, base, line_no))
    return TaskSet(name=path.stem, tasks=tuple(tasks))


def _task_from_record(raw: dict, layout: LayoutSpec, base: Path, line_no: int) -> ChartTask:
    task_id = str(raw.get(layout.id_field) or "").strip()
    if not task_id:
        raise MissingFieldError(f"line {line_no}", layout.id_field)
    description = raw.get(layout.description_field)
    if not description:
        raise MissingFieldError(task_id, layout.description_field)

    raw_category = str(raw.get(layout.category_field) or "")

    data_files: list[tuple[str, str]] = []
    for entry in raw.get(layout.data_files_field) or []:
        try:
            data_files.append((entry["name"], entry["content"]))
        except (TypeError, KeyError) as exc:
            raise MalformedRecordError(line_no, f"bad data_files entry in {task_id!r}") from exc

    image: bytes | None = None
    image_path = raw.get(layout.reference_image_path_field)
    if image_path:
        image = (base / image_path).read_bytes()

    try:
        return ChartTask(
            id=task_id,
            description=str(description),
            category=category_of(raw_category),
            data_files=tuple(data_files),
            reference_code=raw.get(layout.reference_code_field) or None,
            reference_image=image,
            raw_category=raw_category,
        )
    except ValueError as exc:
        raise MalformedRecordError(line_no, str(exc)) from exc


def save_taskset(
    taskset: TaskSet,
    path: str | Path,
    layout: LayoutSpec = T2C31_LAYOUT,
    image_dir_name: str = "reference_images",
) -> Path:
    """Serialize a TaskSet back to JSONL (plus a sibling image directory).

    Inverse of load_taskset: loading the written file yields an identical
    TaskSet.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_dir = path.parent / image_dir_name
    lines = []
    for task in taskset.tasks:
        record: dict = {
            layout.id_field: task.id,
            layout.description_field: task.description,
            layout.category_field: task.raw_category or CATEGORY_TITLES[task.category],
            layout.data_files_field: [
                {"name": n, "content": c} for n, c in task.data_files
            ],
            layout.reference_code_field: task.reference_code,
            layout.reference_image_path_field: None,
        }
        if task.reference_image is not None:
            image_dir.mkdir(parents=True, exist_ok=True)
            rel = f"{image_dir_name}/{_safe_name(task.id)}.png"
            (path.parent / rel).write_bytes(task.reference_image)
            record[layout.reference_image_path_field] = rel
        lines.append(json.dumps(record, sort_keys=True, ensure_ascii=False))
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def _safe_name(task_id: str) -> str:
    return re.sub(r"[^-\w.]+", "_", task_id)
