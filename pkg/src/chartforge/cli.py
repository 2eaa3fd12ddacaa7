"""Command-line driver: run pipelines, render report tables, export review samples.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import random
import re
import sys
from pathlib import Path

import click

from . import __version__, gateway, judge as judge_mod
from .corpus import T2C31_LAYOUT, TaskSet, get_layout, load_taskset, save_taskset
from .pipeline import (
    FewShot,
    PipelineConfig,
    ZeroShot,
    read_records_jsonl,
    run_suite,
    write_records_jsonl,
)
from .reporting import (
    MissingInputsError,
    audit_table,
    error_table,
    errors_topk_table,
    image_table,
    iterations_table,
    similarity_table,
)
from .sandbox import (
    DeterministicFakeBackend,
    Limits,
    ProcessBackend,
    ShimBackend,
)

log = logging.getLogger("chartforge.cli")

RECORDS_NAME = "records.jsonl"
MANIFEST_NAME = "manifest.json"
TASKS_SNAPSHOT_NAME = "tasks.jsonl"
JUDGMENTS_NAME = "judgments.jsonl"
AUDIT_NAME = "audit.jsonl"


@click.group()
@click.version_option(version=__version__, prog_name="chartforge")
@click.option("--verbose", "-v", is_flag=True, help="Log progress at INFO level.")
def cli(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _make_provider(name: str):
    if name == "mock":
        return gateway.DeterministicMockProvider()
    try:
        return gateway.HttpProvider.from_env()
    except gateway.AuthFailedError as exc:
        raise click.ClickException(
            f"live provider refused: {exc} (set {gateway.API_KEY_ENV} to proceed)"
        )


def _make_backend(name: str, shim_script: str | None, interpreter: str):
    from .sandbox import BackendUnavailableError

    try:
        if name == "fake":
            return DeterministicFakeBackend()
        if name == "process":
            return ProcessBackend(interpreter=interpreter)
        return ShimBackend(shim_script=shim_script or "shim/shim_runner.py",
                           interpreter=interpreter)
    except BackendUnavailableError as exc:
        raise click.ClickException(str(exc))


@cli.command("run")
@click.argument("dataset", type=click.Path(exists=True, dir_okay=False))
@click.option("--layout", type=click.Choice(["t2c31", "chartx"]), default="t2c31",
              show_default=True, help="Dataset field-name layout.")
@click.option("--mode", type=click.Choice(["zs", "fs"]), default="zs",
              show_default=True, help="Zero-shot or few-shot drafting.")
@click.option("--max-iters", type=click.IntRange(min=0), default=3, show_default=True,
              help="Repair iteration budget (0 = draft-only baseline).")
@click.option("--backend", type=click.Choice(["fake", "process", "shim"]),
              default="fake", show_default=True, help="Script execution backend.")
@click.option("--provider", type=click.Choice(["live", "mock"]), default="mock",
              show_default=True, help="Chat-completion provider.")
@click.option("--model", default="gpt-4o-mini", show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--timeout", type=float, default=60.0, show_default=True,
              help="Per-script wall timeout in seconds.")
@click.option("--limit", type=click.IntRange(min=1), default=None,
              help="Run only the first N tasks.")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Recorded in the manifest for downstream sampling.")
@click.option("--shim-script", type=click.Path(), default=None,
              help="Path to the shim runner (backend=shim).")
@click.option("--interpreter", default=sys.executable,
              help="Interpreter for process/shim backends.")
@click.option("--judge/--no-judge", "run_judge", default=False, show_default=True,
              help="Also collect perceptual-score and accessibility verdicts.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
              help="Run directory to create.")
def cmd_run(dataset, layout, mode, max_iters, backend, provider, model, workers,
            timeout, limit, seed, shim_script, interpreter, run_judge, out_dir):
    """Run the draft-and-repair pipeline over a dataset split."""
    try:
        tasks = load_taskset(dataset, get_layout(layout))
    except Exception as exc:
        raise click.ClickException(f"cannot load dataset: {exc}")
    if limit is not None:
        tasks = TaskSet(name=tasks.name, tasks=tasks.tasks[:limit])

    provider_handle = _make_provider(provider)
    backend_handle = _make_backend(backend, shim_script, interpreter)
    cfg = PipelineConfig(
        prompt_mode=FewShot() if mode == "fs" else ZeroShot(),
        max_repair_iterations=max_iters,
        execution_limits=Limits(wall_timeout=timeout),
        model_name=model,
    )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_suite(tasks, cfg, provider_handle, backend_handle, workers=workers)

    write_records_jsonl(records, out / RECORDS_NAME, images_dir=out / "images")
    save_taskset(tasks, out / TASKS_SNAPSHOT_NAME)
    _write_task_artifacts(records, out)

    manifest = {
        "dataset": str(dataset),
        "dataset_name": tasks.name,
        "layout": layout,
        "mode": mode,
        "max_repair_iterations": max_iters,
        "backend": backend,
        "provider": provider,
        "endpoint": getattr(provider_handle, "endpoint", provider),
        "model": model,
        "workers": workers,
        "seed": seed,
        "timeout_s": timeout,
        "task_count": len(tasks),
        "judge": run_judge,
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "version": __version__,
    }
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    if run_judge:
        _run_judges(records, tasks, provider_handle, model, out)

    succeeded = sum(1 for r in records if r.succeeded)
    click.echo(f"{len(records)} task(s) -> {succeeded} succeeded, "
               f"{len(records) - succeeded} failed; run written to {out}")


def _write_task_artifacts(records, out: Path) -> None:
    scripts_dir = out / "scripts"
    tracebacks_dir = out / "tracebacks"
    scripts_dir.mkdir(exist_ok=True)
    tracebacks_dir.mkdir(exist_ok=True)
    for record in records:
        safe = re.sub(r"[^-\w.]+", "_", record.task_id)
        for idx, (script, outcome) in enumerate(record.attempts):
            (scripts_dir / f"{safe}-attempt{idx}.py").write_text(
                script.code, encoding="utf-8"
            )
            if outcome.traceback:
                (tracebacks_dir / f"{safe}-attempt{idx}.txt").write_text(
                    outcome.traceback, encoding="utf-8"
                )


def _run_judges(records, tasks, provider_handle, model, out: Path) -> None:
    perceptual = judge_mod.perceptual_suite(records, tasks, provider_handle, model)
    with (out / JUDGMENTS_NAME).open("w", encoding="utf-8") as fh:
        for task_id in sorted(perceptual.scores):
            fh.write(json.dumps(
                {"task_id": task_id, "score": perceptual.scores[task_id]},
                sort_keys=True,
            ) + "\n")
    audit = judge_mod.audit_suite(records, tasks, provider_handle, model)
    with (out / AUDIT_NAME).open("w", encoding="utf-8") as fh:
        for task_id in sorted(audit.verdicts):
            fh.write(json.dumps(
                {"task_id": task_id, "judgment": audit.verdicts[task_id]},
                sort_keys=True,
            ) + "\n")


def _load_run(run_dir: Path):
    records_path = run_dir / RECORDS_NAME
    if not records_path.is_file():
        raise click.ClickException(f"{records_path} not found; is this a run directory?")
    return read_records_jsonl(records_path)


def _load_tasks_snapshot(run_dir: Path) -> TaskSet:
    snapshot = run_dir / TASKS_SNAPSHOT_NAME
    if not snapshot.is_file():
        raise click.ClickException(
            f"{snapshot} not found; this table needs the task snapshot"
        )
    return load_taskset(snapshot, T2C31_LAYOUT)


def _run_label(run_dir: Path) -> str:
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        return "run"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    condition = "Agentic" if manifest.get("max_repair_iterations", 0) > 0 else "Baseline"
    return f"{manifest.get('mode', '?').upper()} {manifest.get('model', '?')} {condition}"


@cli.command("report")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--table", required=True,
              type=click.Choice(
                  ["error", "similarity", "image", "iterations", "errors-topk", "audit"]
              ))
@click.option("--fmt", type=click.Choice(["csv", "json"]), default="csv", show_default=True)
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None,
              help="Write to a file instead of stdout.")
@click.option("--iteration", type=click.IntRange(min=0), default=0, show_default=True,
              help="Attempt index for errors-topk (0 = draft execution).")
@click.option("--k", type=click.IntRange(min=1), default=3, show_default=True,
              help="Bucket count for errors-topk.")
@click.option("--per-task", is_flag=True, help="Per-task rows for the similarity table.")
def cmd_report(run_dir, table, fmt, out_file, iteration, k, per_task):
    """Render one report table from a finished run directory."""
    run_path = Path(run_dir)
    records = _load_run(run_path)
    label = _run_label(run_path)
    try:
        if table == "error":
            rendered = error_table(records, _load_tasks_snapshot(run_path), label)
        elif table == "similarity":
            rendered = similarity_table(
                records, _load_tasks_snapshot(run_path), label, per_task=per_task
            )
        elif table == "image":
            judge_scores = _read_judgments(run_path)
            rendered = image_table(
                records, _load_tasks_snapshot(run_path), label, judge_scores
            )
        elif table == "iterations":
            manifest_path = run_path / MANIFEST_NAME
            max_iters = None
            if manifest_path.is_file():
                max_iters = json.loads(manifest_path.read_text()).get(
                    "max_repair_iterations"
                )
            rendered = iterations_table(records, max_iters)
        elif table == "errors-topk":
            rendered = errors_topk_table(records, iteration=iteration, k=k)
        else:
            rendered = audit_table(_read_audit(run_path), label)
    except (MissingInputsError, ValueError) as exc:
        raise click.ClickException(str(exc))

    text = rendered.render(fmt)
    if out_file:
        Path(out_file).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _read_judgments(run_dir: Path) -> dict[str, int] | None:
    path = run_dir / JUDGMENTS_NAME
    if not path.is_file():
        return None
    scores = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            raw = json.loads(line)
            scores[raw["task_id"]] = raw["score"]
    return scores


def _read_audit(run_dir: Path) -> dict[str, str]:
    path = run_dir / AUDIT_NAME
    if not path.is_file():
        raise MissingInputsError(
            f"{path} not found; re-run with --judge to collect audit verdicts"
        )
    verdicts = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            raw = json.loads(line)
            verdicts[raw["task_id"]] = raw["judgment"]
    return verdicts


@cli.command("sample")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--n", type=click.IntRange(min=0), default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Bundle directory (default: <run_dir>/review_sample).")
def cmd_sample(run_dir, n, seed, out_dir):
    """Export a seeded random sample of generated charts for manual review."""
    run_path = Path(run_dir)
    records = _load_run(run_path)
    with_images = sorted(
        (r for r in records if r.final_image is not None), key=lambda r: r.task_id
    )
    if len(with_images) < n:
        raise click.ClickException(
            f"not enough records with images: have {len(with_images)}, need {n}"
        )
    sample = random.Random(seed).sample(with_images, n)
    sample.sort(key=lambda r: r.task_id)

    reference_images = _reference_images(run_path)
    bundle = Path(out_dir) if out_dir else run_path / "review_sample"
    bundle.mkdir(parents=True, exist_ok=True)

    rows = []
    for record in sample:
        safe = re.sub(r"[^-\w.]+", "_", record.task_id)
        generated_name = f"generated_{safe}.png"
        (bundle / generated_name).write_bytes(record.final_image)
        reference_name = ""
        if record.task_id in reference_images:
            reference_name = f"reference_{safe}.png"
            (bundle / reference_name).write_bytes(reference_images[record.task_id])
        rows.append((record.task_id, generated_name, reference_name, ""))

    with (bundle / "review.csv").open("w", encoding="utf-8", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(("task_id", "generated_image", "reference_image", "label"))
        writer.writerows(rows)
    (bundle / "README.txt").write_text(
        "Label each row in review.csv as one of: Successful, WrongStyle, ErrorDataOther.\n",
        encoding="utf-8",
    )
    click.echo(f"wrote {len(rows)} review pair(s) to {bundle}")


def _reference_images(run_dir: Path) -> dict[str, bytes]:
    snapshot = run_dir / TASKS_SNAPSHOT_NAME
    if not snapshot.is_file():
        return {}
    tasks = load_taskset(snapshot, T2C31_LAYOUT)
    return {
        t.id: t.reference_image for t in tasks.tasks if t.reference_image is not None
    }


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
