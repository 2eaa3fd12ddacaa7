"""Drafting and repair orchestration.

One task flows through a fixed state machine: draft the script, execute
it, and while it fails and the iteration budget remains, ask the model to
diagnose the traceback (reflection) and then to rewrite the script from
that diagnosis.  Each repair iteration is therefore two model calls.  The
supervising loop itself is plain code, not a model.

With ``max_repair_iterations = 0`` the loop degenerates to draft-only
execution, which is the baseline condition reports compare against.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import gateway
from .corpus import ChartTask, TaskSet
from .exemplars import DEFAULT_EXEMPLARS
from .gateway import ChatCompletion, ChatRequest, GatewayError, complete
from .sandbox import (
    ExecutionOutcome,
    Limits,
    Workspace,
    execute,
    prepare_workspace,
    raised_outcome,
)

log = logging.getLogger("chartforge.pipeline")

DRAFT_SYSTEM_PROMPT = (
    "You are good at generating complete python code from the given chart description."
)

CODE_PREAMBLE_LINES = (
    "import matplotlib.pyplot as plt",
    "import pandas as pd",
    "import numpy as np",
)
CODE_PREAMBLE = "\n".join(CODE_PREAMBLE_LINES)

DRAFT_USER_TEMPLATE = (
    "Your task is to generate a complete Python code for the given description. "
    "Make sure to include all necessary libraries.\n"
    "\n"
    "Description: {description}\n"
    "\n"
    "Please generate the corresponding code that generates the plot that has the above description.\n"
    "Code:\n"
    "```" + CODE_PREAMBLE + "\n"
)

REFLECTION_TEMPLATE = (
    "The following Python code produced an error:\n"
    "\n"
    "{code}\n"
    "\n"
    "Error: {error}\n"
    "\n"
    "Identify the root cause of the error. Provide a suggestion to fix ONLY the "
    "problematic lines, explicitly specifying which parts of the original code "
    "should REMAIN UNCHANGED. Return the complete code with the suggested "
    "modifications inserted."
)

REWRITER_SYSTEM_PROMPT = (
    "You are an expert Python code rewriter. Your task is to rewrite Python code "
    "based strictly on the user's suggestions.\n"
    "- DO NOT modify any part of the code that is not explicitly mentioned in the suggestion.\n"
    "- Ensure that the rewritten code is functional, error-free, and adheres to "
    "Python syntax rules (e.g., indentation, brackets, braces).\n"
    "- Return ONLY the complete revised code without explanations, comments, or "
    "Markdown formatting.\n"
    "- Follow instructions EXACTLY as provided."
)

REWRITE_USER_TEMPLATE = (
    "Rewrite the following Python code based on this suggestion:\n"
    "\n"
    "Original Code:\n"
    "{code}\n"
    "\n"
    "Suggestion:\n"
    "{suggestion}"
)

ORIGIN_DRAFT = "draft"
ORIGIN_REPAIR = "repair"

STATUS_SUCCESS = "success"
STATUS_FAILED = "failed"

EMPTY_COMPLETION_TRACEBACK = "EmptyCompletion"


class EmptyCodeError(Exception):
    """The completion contained no code once fences were stripped."""


@dataclass(frozen=True)
class ZeroShot:
    pass


@dataclass(frozen=True)
class FewShot:
    exemplars: tuple[tuple[str, str], ...] = DEFAULT_EXEMPLARS

    def __post_init__(self) -> None:
        if not self.exemplars:
            raise ValueError("few-shot mode needs at least one exemplar")


PromptMode = ZeroShot | FewShot


@dataclass(frozen=True)
class ScriptSource:
    code: str
    origin: str = ORIGIN_DRAFT
    iteration: int = 0

    def __post_init__(self) -> None:
        if not self.code:
            raise ValueError("script code must be non-empty")
        if self.origin not in (ORIGIN_DRAFT, ORIGIN_REPAIR):
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.origin == ORIGIN_DRAFT and self.iteration != 0:
            raise ValueError("draft scripts have iteration 0")
        if self.origin == ORIGIN_REPAIR and self.iteration < 1:
            raise ValueError("repair scripts have iteration >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    prompt_mode: PromptMode = ZeroShot()
    max_repair_iterations: int = 3
    execution_limits: Limits = Limits()
    model_name: str = "gpt-4o-mini"
    temperature: float = gateway.DEFAULT_TEMPERATURE
    max_output_tokens: int = gateway.DEFAULT_MAX_OUTPUT_TOKENS

    def __post_init__(self) -> None:
        if self.max_repair_iterations < 0:
            raise ValueError("max_repair_iterations must be >= 0")


@dataclass(frozen=True)
class PipelineRecord:
    task_id: str
    draft: ScriptSource | None
    attempts: tuple[tuple[ScriptSource, ExecutionOutcome], ...]
    final_status: str
    iteration_fixed: int | None
    suggestions: tuple[str, ...] = ()
    error: str | None = None

    @property
    def succeeded(self) -> bool:
        return self.final_status == STATUS_SUCCESS

    @property
    def final_script(self) -> ScriptSource | None:
        return self.attempts[-1][0] if self.attempts else self.draft

    @property
    def final_image(self) -> bytes | None:
        if self.succeeded and self.attempts:
            return self.attempts[-1][1].image
        return None

    def validate(self, max_repair_iterations: int) -> None:
        """Check the state-machine invariants; raises AssertionError."""
        assert len(self.attempts) <= 1 + max_repair_iterations
        if self.error is None:
            assert len(self.attempts) >= 1
        if self.final_status == STATUS_SUCCESS:
            k = self.iteration_fixed
            assert k is not None and 0 <= k < len(self.attempts)
            assert k == len(self.attempts) - 1
            assert self.attempts[k][1].ok
            assert all(not a[1].ok for a in self.attempts[:k])
        else:
            assert self.iteration_fixed is None
            assert all(not a[1].ok for a in self.attempts)


# --- prompt builders ----------------------------------------------------------

def build_draft_request(
    task: ChartTask,
    mode: PromptMode = ZeroShot(),
    model_name: str = "gpt-4o-mini",
    temperature: float = gateway.DEFAULT_TEMPERATURE,
    max_output_tokens: int = gateway.DEFAULT_MAX_OUTPUT_TOKENS,
) -> ChatRequest:
    """Build the drafting request: system prompt, optional exemplar pairs,
    then the user instructions with the task description substituted."""
    if not task.description:
        raise ValueError("task description must be non-empty")
    messages = [gateway.system(DRAFT_SYSTEM_PROMPT)]
    if isinstance(mode, FewShot):
        for exemplar_description, exemplar_code in mode.exemplars:
            messages.append(
                gateway.user(DRAFT_USER_TEMPLATE.format(description=exemplar_description))
            )
            messages.append(gateway.assistant(exemplar_code))
    messages.append(gateway.user(DRAFT_USER_TEMPLATE.format(description=task.description)))
    return ChatRequest(
        model_name=model_name,
        messages=tuple(messages),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def build_reflection_request(
    code: ScriptSource,
    error_text: str,
    model_name: str = "gpt-4o-mini",
    temperature: float = gateway.DEFAULT_TEMPERATURE,
    max_output_tokens: int = gateway.DEFAULT_MAX_OUTPUT_TOKENS,
) -> ChatRequest:
    if not error_text:
        raise ValueError("error text must be non-empty")
    text = REFLECTION_TEMPLATE.format(code=code.code, error=error_text)
    return ChatRequest(
        model_name=model_name,
        messages=(gateway.user(text),),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def build_rewrite_request(
    code: ScriptSource,
    suggestion: str,
    model_name: str = "gpt-4o-mini",
    temperature: float = gateway.DEFAULT_TEMPERATURE,
    max_output_tokens: int = gateway.DEFAULT_MAX_OUTPUT_TOKENS,
) -> ChatRequest:
    if not suggestion:
        raise ValueError("suggestion must be non-empty")
    text = REWRITE_USER_TEMPLATE.format(code=code.code, suggestion=suggestion)
    return ChatRequest(
        model_name=model_name,
        messages=(gateway.system(REWRITER_SYSTEM_PROMPT), gateway.user(text)),
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


_FENCED_BLOCK_RE = re.compile(r"```[a-zA-Z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_code(
    completion_text: str, origin: str = ORIGIN_DRAFT, iteration: int = 0
) -> ScriptSource:
    """Pull runnable code out of a completion.

    Takes the first fenced code block when one exists, otherwise the whole
    text with any trailing fence stripped (the draft prompt opens a fence
    the model often just continues).  The import preamble is prepended
    when the extracted code lacks it.
    """
    match = _FENCED_BLOCK_RE.search(completion_text)
    if match:
        code = match.group(1)
    elif completion_text.lstrip().startswith("```"):
        # Opening fence never closed: drop the fence line, keep the rest.
        _fence_line, _, code = completion_text.lstrip().partition("\n")
    else:
        # The draft prompt itself opens a fence, so the completion may just
        # close it (possibly with prose after); keep what precedes the marker.
        code = completion_text.split("```", 1)[0]
    if not code.strip():
        raise EmptyCodeError("completion contained no code")
    missing = [line for line in CODE_PREAMBLE_LINES if line not in code]
    if missing:
        code = "\n".join(missing) + "\n" + code
    return ScriptSource(code=code, origin=origin, iteration=iteration)


# --- the repair loop ----------------------------------------------------------

def run_task(task: ChartTask, cfg: PipelineConfig, provider, executor) -> PipelineRecord:
    """Draft, execute, and repair one task; never raises on model failure."""
    attempts: list[tuple[ScriptSource, ExecutionOutcome]] = []
    suggestions: list[str] = []
    draft: ScriptSource | None = None
    ws = prepare_workspace(task)
    try:
        completion = complete(
            build_draft_request(
                task, cfg.prompt_mode, cfg.model_name, cfg.temperature, cfg.max_output_tokens
            ),
            provider,
        )
        draft, outcome = _attempt(completion, ORIGIN_DRAFT, 0, ws, cfg, executor)
        attempts.append((draft, outcome))

        iteration = 0
        while not attempts[-1][1].ok and iteration < cfg.max_repair_iterations:
            iteration += 1
            last_script, last_outcome = attempts[-1]
            error_text = last_outcome.traceback or f"Execution failed ({last_outcome.status})"
            reflection = complete(
                build_reflection_request(
                    last_script, error_text, cfg.model_name, cfg.temperature,
                    cfg.max_output_tokens,
                ),
                provider,
            )
            suggestions.append(reflection.text)
            rewrite = complete(
                build_rewrite_request(
                    last_script, reflection.text, cfg.model_name, cfg.temperature,
                    cfg.max_output_tokens,
                ),
                provider,
            )
            script, outcome = _attempt(rewrite, ORIGIN_REPAIR, iteration, ws, cfg, executor)
            attempts.append((script, outcome))
    except GatewayError as exc:
        log.warning("task %s: gateway failure: %s", task.id, exc)
        return PipelineRecord(
            task_id=task.id,
            draft=draft,
            attempts=tuple(attempts),
            final_status=STATUS_FAILED,
            iteration_fixed=None,
            suggestions=tuple(suggestions),
            error=str(exc),
        )
    finally:
        ws.cleanup()

    fixed = next((i for i, (_s, o) in enumerate(attempts) if o.ok), None)
    return PipelineRecord(
        task_id=task.id,
        draft=draft,
        attempts=tuple(attempts),
        final_status=STATUS_SUCCESS if fixed is not None else STATUS_FAILED,
        iteration_fixed=fixed,
        suggestions=tuple(suggestions),
    )


def _attempt(
    completion: ChatCompletion,
    origin: str,
    iteration: int,
    ws: Workspace,
    cfg: PipelineConfig,
    executor,
) -> tuple[ScriptSource, ExecutionOutcome]:
    """Turn one completion into an executed attempt.

    An empty completion is recorded as a failed attempt with a synthetic
    traceback so the repair loop still gets a shot at it.
    """
    try:
        script = extract_code(completion.text, origin=origin, iteration=iteration)
    except EmptyCodeError:
        placeholder = completion.text if completion.text.strip() else "# empty completion"
        script = ScriptSource(code=placeholder, origin=origin, iteration=iteration)
        return script, raised_outcome(EMPTY_COMPLETION_TRACEBACK)
    outcome = execute(script, ws, cfg.execution_limits, executor)
    return script, outcome


def run_suite(
    tasks: TaskSet,
    cfg: PipelineConfig,
    provider,
    executor,
    workers: int = 4,
) -> list[PipelineRecord]:
    """Run every task through the pipeline with a bounded worker pool.

    Records come back in task order; per-task failures (including
    unexpected bugs) become failed records instead of aborting the suite.
    """
    def one(task: ChartTask) -> PipelineRecord:
        started = time.monotonic()
        try:
            record = run_task(task, cfg, provider, executor)
        except Exception as exc:  # defensive: a task must never sink the suite
            log.exception("task %s: unexpected failure", task.id)
            record = PipelineRecord(
                task_id=task.id,
                draft=None,
                attempts=(),
                final_status=STATUS_FAILED,
                iteration_fixed=None,
                error=f"internal error: {exc}",
            )
        log.info(
            "task %s: %s (%d attempt(s), %.2fs)",
            task.id, record.final_status, len(record.attempts),
            time.monotonic() - started,
        )
        return record

    if workers <= 1:
        return [one(t) for t in tasks.tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, tasks.tasks))


# --- record persistence ---------------------------------------------------------

def _script_to_dict(script: ScriptSource | None) -> dict | None:
    if script is None:
        return None
    return {"code": script.code, "origin": script.origin, "iteration": script.iteration}


def _script_from_dict(raw: dict | None) -> ScriptSource | None:
    if raw is None:
        return None
    return ScriptSource(code=raw["code"], origin=raw["origin"], iteration=raw["iteration"])


def record_to_dict(record: PipelineRecord, image_writer=None) -> dict:
    """Serialize one record; images go through ``image_writer`` when given
    (returning a path reference), otherwise inline as base64."""
    attempts = []
    for idx, (script, outcome) in enumerate(record.attempts):
        out: dict = {
            "status": outcome.status,
            "traceback": outcome.traceback,
            "duration": outcome.duration,
        }
        if outcome.image is not None:
            if image_writer is not None:
                out["image_path"] = image_writer(record.task_id, idx, outcome.image)
            else:
                out["image_b64"] = base64.b64encode(outcome.image).decode("ascii")
        attempts.append({"script": _script_to_dict(script), "outcome": out})
    return {
        "task_id": record.task_id,
        "draft": _script_to_dict(record.draft),
        "attempts": attempts,
        "final_status": record.final_status,
        "iteration_fixed": record.iteration_fixed,
        "suggestions": list(record.suggestions),
        "error": record.error,
    }


def record_from_dict(raw: dict, image_reader=None) -> PipelineRecord:
    attempts = []
    for entry in raw["attempts"]:
        out = entry["outcome"]
        image = None
        if "image_b64" in out:
            image = base64.b64decode(out["image_b64"])
        elif out.get("image_path") and image_reader is not None:
            image = image_reader(out["image_path"])
        attempts.append(
            (
                _script_from_dict(entry["script"]),
                ExecutionOutcome(
                    status=out["status"],
                    traceback=out.get("traceback"),
                    image=image,
                    duration=out.get("duration", 0.0),
                ),
            )
        )
    return PipelineRecord(
        task_id=raw["task_id"],
        draft=_script_from_dict(raw.get("draft")),
        attempts=tuple(attempts),
        final_status=raw["final_status"],
        iteration_fixed=raw.get("iteration_fixed"),
        suggestions=tuple(raw.get("suggestions") or ()),
        error=raw.get("error"),
    )


def write_records_jsonl(
    records: list[PipelineRecord], path: str | Path, images_dir: str | Path | None = None
) -> Path:
    """Write records as JSON lines; images are externalized under
    ``images_dir`` (referenced by path relative to the records file)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    writer = None
    if images_dir is not None:
        images_dir = Path(images_dir)
        images_dir.mkdir(parents=True, exist_ok=True)

        def writer(task_id: str, attempt_idx: int, data: bytes) -> str:
            safe = re.sub(r"[^-\w.]+", "_", task_id)
            rel = Path(images_dir.name) / f"{safe}-attempt{attempt_idx}.png"
            (path.parent / rel).write_bytes(data)
            return str(rel)

    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_dict(record, writer), sort_keys=True))
            fh.write("\n")
    return path


def read_records_jsonl(path: str | Path) -> list[PipelineRecord]:
    path = Path(path)
    base = path.parent

    def reader(rel: str) -> bytes:
        return (base / rel).read_bytes()

    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line), reader))
    return records
