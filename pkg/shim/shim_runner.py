#!/usr/bin/env python3
"""Self-contained runner for candidate chart scripts.

Runs one script in the current working directory under a forced headless
plotting backend, with figure display calls rewritten to file saves, and
emits exactly one structured result record on stdout::

    CHARTFORGE_RESULT:{"status": ..., "traceback": ..., "images": [...], "duration_ms": ...}

Status is "ok" or "raised"; the traceback is the interpreter's native
traceback for the candidate (shim frames trimmed).  Script stdout passes
through untouched; only the sentinel line belongs to the shim.  Exit
codes: 0 ok, 1 raised, 2 script file missing.  Resource limiting is the
caller's job.

Usage: python shim_runner.py <script.py>
"""

import json
import os
import sys
import time
import traceback

SENTINEL = "CHARTFORGE_RESULT:"
OUTPUT_NAME = "__chartforge_output.png"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".svg", ".pdf")

# Must happen before any plotting import anywhere in this process.
os.environ["MPLBACKEND"] = "Agg"


def _patch_display():
    """Rewrite pyplot display calls to file saves; no-op without matplotlib."""
    try:
        import matplotlib.pyplot as plt
    except Exception:
        return None

    state = {"count": 0}

    def save_instead(*args, **kwargs):
        for num in plt.get_fignums():
            state["count"] += 1
            name = OUTPUT_NAME if state["count"] == 1 else (
                "__chartforge_output_%d.png" % state["count"]
            )
            plt.figure(num).savefig(name)

    plt.show = save_instead
    return plt


def _save_leftover_figures(plt):
    """Scripts that neither show nor save still must yield a raster."""
    if plt is None:
        return
    try:
        if plt.get_fignums():
            plt.savefig(OUTPUT_NAME)
    except Exception:
        pass


def _list_images():
    return sorted(
        name
        for name in os.listdir(".")
        if name.lower().endswith(IMAGE_SUFFIXES) and os.path.isfile(name)
    )


def _snapshot():
    stamps = {}
    for name in _list_images():
        try:
            stamps[name] = os.stat(name).st_mtime_ns
        except OSError:
            pass
    return stamps


def _new_images(before):
    fresh = []
    for name in _list_images():
        try:
            stamp = os.stat(name).st_mtime_ns
        except OSError:
            continue
        if before.get(name) != stamp:
            fresh.append((stamp, name))
    fresh.sort()
    return [name for _stamp, name in fresh]


def _candidate_traceback(exc, script_path):
    """Format the exception the way a direct interpreter run prints it,
    keeping only frames from the candidate script."""
    if isinstance(exc, SyntaxError):
        return "".join(traceback.format_exception_only(type(exc), exc))
    tb = exc.__traceback__
    while tb is not None and tb.tb_frame.f_code.co_filename != script_path:
        tb = tb.tb_next
    lines = ["Traceback (most recent call last):\n"]
    if tb is not None:
        lines.extend(traceback.format_tb(tb))
    lines.extend(traceback.format_exception_only(type(exc), exc))
    return "".join(lines)


def _emit(status, tb_text, images, started):
    record = {
        "status": status,
        "traceback": tb_text,
        "images": images,
        "duration_ms": int((time.monotonic() - started) * 1000),
    }
    sys.stdout.flush()
    print(SENTINEL + json.dumps(record))
    sys.stdout.flush()


def main(argv):
    if len(argv) != 2:
        print("usage: shim_runner.py <script.py>", file=sys.stderr)
        return 2
    script_path = argv[1]
    if not os.path.isfile(script_path):
        print("shim_runner: script file not found: %s" % script_path, file=sys.stderr)
        return 2
    # The interpreter reports the main script by absolute path; compiling
    # with the same form keeps tracebacks byte-identical to a direct run.
    script_path = os.path.abspath(script_path)

    started = time.monotonic()
    before = _snapshot()
    plt = _patch_display()

    with open(script_path, "r", encoding="utf-8") as fh:
        source = fh.read()

    namespace = {"__name__": "__main__", "__file__": script_path, "__builtins__": __builtins__}
    status, tb_text = "ok", ""
    try:
        code = compile(source, script_path, "exec")
        exec(code, namespace)
    except SystemExit as exc:
        if exc.code not in (None, 0):
            status = "raised"
            tb_text = "SystemExit: %s\n" % exc.code
    except BaseException as exc:  # noqa: BLE001 - candidate failures are data here
        status = "raised"
        tb_text = _candidate_traceback(exc, script_path)

    new_images = _new_images(before)
    if status == "ok" and not new_images:
        _save_leftover_figures(plt)
        new_images = _new_images(before)
    if status == "ok" and not new_images:
        status = "raised"
        tb_text = (
            "ChartOutputMissing: the script ran to completion but produced no image file\n"
        )

    _emit(status, tb_text, new_images, started)
    if status == "raised":
        sys.stderr.write(tb_text)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
