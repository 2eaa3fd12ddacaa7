from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from chartforge.corpus import CategoryLabel, ChartTask, TaskSet
from chartforge.pipeline import PipelineRecord, ScriptSource
from chartforge.sandbox import TINY_PNG, ok_outcome, raised_outcome


@pytest.fixture
def tiny_png() -> bytes:
    return TINY_PNG


def png_bytes(array: np.ndarray) -> bytes:
    """Encode a uint8 array (2-D grayscale or 3-D RGB) as PNG bytes."""
    mode = "L" if array.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(array.astype(np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def random_png(rng: np.random.Generator, width: int = 16, height: int = 16) -> bytes:
    return png_bytes(rng.integers(0, 256, size=(height, width), dtype=np.uint8))


def make_task(
    task_id: str = "t1",
    description: str = "A bar chart of widget sales by region.",
    category: CategoryLabel = CategoryLabel.PAIRWISE,
    **kwargs,
) -> ChartTask:
    return ChartTask(id=task_id, description=description, category=category, **kwargs)


def make_taskset(n: int = 3, category: CategoryLabel = CategoryLabel.PAIRWISE) -> TaskSet:
    return TaskSet(
        name="fixture",
        tasks=tuple(
            make_task(task_id=f"t{i}", description=f"Chart number {i}.", category=category)
            for i in range(n)
        ),
    )


def make_record(
    task_id: str = "t1",
    outcomes: tuple[bool, ...] = (True,),
    error: str | None = None,
    tracebacks: tuple[str, ...] | None = None,
    image: bytes = TINY_PNG,
) -> PipelineRecord:
    """Build a pipeline record from a pattern of attempt outcomes."""
    attempts = []
    for idx, passed in enumerate(outcomes):
        origin = "draft" if idx == 0 else "repair"
        script = ScriptSource(code=f"plot_{idx} = {idx}", origin=origin, iteration=idx)
        if passed:
            attempts.append((script, ok_outcome(image)))
        else:
            tb = (
                tracebacks[idx]
                if tracebacks is not None
                else f"Traceback (most recent call last):\nValueError: attempt {idx} failed"
            )
            attempts.append((script, raised_outcome(tb)))
    fixed = next((i for i, passed in enumerate(outcomes) if passed), None)
    return PipelineRecord(
        task_id=task_id,
        draft=attempts[0][0] if attempts else None,
        attempts=tuple(attempts),
        final_status="success" if fixed is not None else "failed",
        iteration_fixed=fixed,
        error=error,
    )


def write_jsonl(path: Path, records: list[dict]) -> Path:
    path.write_text(
        "".join(json.dumps(r) + "\n" for r in records), encoding="utf-8"
    )
    return path
