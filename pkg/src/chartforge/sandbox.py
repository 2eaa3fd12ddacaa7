"""Isolated execution of candidate chart scripts.

Each task gets a throwaway workspace directory with its data files
materialized; a backend runs the script there and reports an
ExecutionOutcome.  Backends:

* ProcessBackend — real child interpreter, headless plotting, wall timeout,
  process-tree kill.
* ShimBackend — child interpreter running the external shim runner, which
  reports a structured result record on stdout instead of us scraping stderr.
* FakeBackend — scripted outcomes for hermetic tests.
* DeterministicFakeBackend — outcome derived from the script content; used
  by mock pipeline runs so results are reproducible without an interpreter.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import ChartTask

log = logging.getLogger("chartforge.sandbox")

# 1x1 white PNG; used wherever a fake outcome needs a valid raster.
TINY_PNG = (
    b"\x89PNG\r\n\x1a\n\x00\x00\x00\rIHDR\x00\x00\x00\x01\x00\x00\x00\x01"
    b"\x08\x00\x00\x00\x00:~\x9bU\x00\x00\x00\nIDATx\x9cc\xf8\x0f\x00\x01"
    b"\x01\x01\x00\xb18\xf6\x14\x00\x00\x00\x00IEND\xaeB`\x82"
)

FORCED_OUTPUT_NAME = "__chartforge_output.png"
SHIM_SENTINEL = "CHARTFORGE_RESULT:"

NETWORK_DENIED = "denied"
NETWORK_ALLOWED = "allowed"

STATUS_OK = "ok"
STATUS_RAISED = "raised"
STATUS_TIMEOUT = "timeout"
STATUS_CRASHED = "crashed"

_ENV_ALLOWLIST = ("PATH", "HOME", "LANG", "LC_ALL", "TMPDIR")


class BackendUnavailableError(Exception):
    """The selected execution backend cannot start."""


@dataclass(frozen=True)
class Limits:
    wall_timeout: float = 60.0
    max_output_bytes: int = 1 << 20
    network: str = NETWORK_DENIED

    def __post_init__(self) -> None:
        if self.wall_timeout <= 0:
            raise ValueError("wall_timeout must be positive")
        if self.network not in (NETWORK_DENIED, NETWORK_ALLOWED):
            raise ValueError(f"unknown network policy {self.network!r}")


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str
    traceback: str | None = None
    image: bytes | None = None
    duration: float = 0.0

    def __post_init__(self) -> None:
        if self.status not in (STATUS_OK, STATUS_RAISED, STATUS_TIMEOUT, STATUS_CRASHED):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == STATUS_OK and self.image is None:
            raise ValueError("a successful execution must carry an image")
        if self.status == STATUS_RAISED and not self.traceback:
            raise ValueError("a raised execution must carry a traceback")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


def ok_outcome(image: bytes = TINY_PNG, duration: float = 0.0) -> ExecutionOutcome:
    return ExecutionOutcome(status=STATUS_OK, image=image, duration=duration)


def raised_outcome(traceback_text: str, duration: float = 0.0) -> ExecutionOutcome:
    return ExecutionOutcome(status=STATUS_RAISED, traceback=traceback_text, duration=duration)


# --- error classification ----------------------------------------------------

KIND_MISSING_MODULE = "missing_module"
KIND_BAD_KWARG = "bad_keyword_argument"
KIND_NAME_UNDEFINED = "name_undefined"
KIND_SHAPE_MISMATCH = "shape_mismatch"
KIND_LENGTH_MISMATCH = "length_mismatch"
KIND_FILE_NOT_FOUND = "file_not_found"
KIND_SYNTAX_ERROR = "syntax_error"
KIND_TIMEOUT = "timeout"
KIND_OTHER = "other"


@dataclass(frozen=True)
class ErrorSignature:
    kind: str
    detail: tuple[str, ...]
    message_head: str

    @property
    def key(self) -> str:
        """Stable bucket key carrying the kind parameters."""
        return ":".join((self.kind,) + self.detail) if self.detail else self.kind


_QUOTED = r"['\"‘’“”]"
_MODULE_RE = re.compile(rf"No module named {_QUOTED}?([\w.]+){_QUOTED}?")
_KWARG_RE = re.compile(
    rf"([\w.]+)\(\) got an unexpected keyword argument {_QUOTED}(\w+){_QUOTED}"
)
_NAME_RE = re.compile(rf"name {_QUOTED}(\w+){_QUOTED} is not defined")
_FILE_RE = re.compile(rf"No such file or directory:?\s*{_QUOTED}?([^'\"\n]*){_QUOTED}?")


def classify_error(traceback_text: str) -> ErrorSignature:
    """Classify a captured traceback by its final exception line.

    Total over non-empty input: anything unrecognized lands in the
    ``other`` bucket.
    """
    if not traceback_text or not traceback_text.strip():
        raise ValueError("traceback text must be non-empty")
    lines = [line for line in traceback_text.strip().splitlines() if line.strip()]
    head = lines[-1].strip()

    m = _MODULE_RE.search(head)
    if m:
        return ErrorSignature(KIND_MISSING_MODULE, (m.group(1),), head)
    m = _KWARG_RE.search(head)
    if m:
        callee = m.group(1).split(".")[-1]
        return ErrorSignature(KIND_BAD_KWARG, (callee, m.group(2)), head)
    m = _NAME_RE.search(head)
    if m:
        return ErrorSignature(KIND_NAME_UNDEFINED, (m.group(1),), head)
    if "must be 2-dimensional" in head:
        return ErrorSignature(KIND_SHAPE_MISMATCH, (), head)
    if "All arrays must be of the same length" in head:
        return ErrorSignature(KIND_LENGTH_MISMATCH, (), head)
    m = _FILE_RE.search(head)
    if m:
        name = m.group(1).strip()
        return ErrorSignature(KIND_FILE_NOT_FOUND, (name,) if name else (), head)
    if head.startswith("SyntaxError") or "SyntaxError:" in head:
        return ErrorSignature(KIND_SYNTAX_ERROR, (), head)
    if head.startswith("TimeoutError"):
        return ErrorSignature(KIND_TIMEOUT, (), head)
    return ErrorSignature(KIND_OTHER, (), head)


def error_histogram(records, iteration: int = 0) -> dict[str, int]:
    """Count error-signature buckets at one attempt index over a run.

    ``iteration`` is the attempt index: 0 is the draft execution, 1 the
    first repair, and so on.  Only records whose attempt at that index
    failed contribute.  The result maps signature keys to counts, ordered
    by descending count (ties by key).
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    max_attempts = max((len(r.attempts) for r in records), default=0)
    if records and iteration >= max_attempts:
        raise ValueError(f"iteration {iteration} out of range (max attempts {max_attempts})")
    counts: Counter[str] = Counter()
    for record in records:
        if iteration >= len(record.attempts):
            continue
        outcome = record.attempts[iteration][1]
        if outcome.ok or not outcome.traceback:
            continue
        counts[classify_error(outcome.traceback).key] += 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


# --- workspaces ---------------------------------------------------------------

class Workspace:
    """Throwaway working directory owned by exactly one task execution."""

    def __init__(self, root: Path):
        self.root = root

    def cleanup(self) -> None:
        shutil.rmtree(self.root, ignore_errors=True)

    def __enter__(self) -> "Workspace":
        return self

    def __exit__(self, *exc) -> None:
        self.cleanup()


def prepare_workspace(task: ChartTask) -> Workspace:
    """Create a fresh directory holding the task's data files."""
    root = Path(tempfile.mkdtemp(prefix="chartforge-"))
    try:
        for name, content in task.data_files:
            target = root / name
            if not target.resolve().is_relative_to(root.resolve()):
                raise ValueError(f"data file {name!r} escapes the workspace")
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(content, encoding="utf-8")
    except Exception:
        shutil.rmtree(root, ignore_errors=True)
        raise
    return Workspace(root)


# --- backends -----------------------------------------------------------------

def execute(script, ws: Workspace, limits: Limits, backend) -> ExecutionOutcome:
    """Run one candidate script in the workspace under the given backend."""
    return backend.run(script, ws, limits)


def _scrubbed_env() -> dict[str, str]:
    env = {k: os.environ[k] for k in _ENV_ALLOWLIST if k in os.environ}
    env["MPLBACKEND"] = "Agg"
    env["PYTHONDONTWRITEBYTECODE"] = "1"
    env["PYTHONIOENCODING"] = "utf-8"
    return env


# Appended to scripts that never save a figure themselves, so every
# successful run yields a raster even when the script only calls show().
_FORCED_SAVE_EPILOGUE = f"""

# forced figure save (appended by the harness)
try:
    import matplotlib.pyplot as _cf_plt
    if _cf_plt.get_fignums():
        _cf_plt.savefig({FORCED_OUTPUT_NAME!r})
except Exception:
    pass
"""

_NO_IMAGE_TRACEBACK = (
    "ChartOutputMissing: the script ran to completion but produced no image file"
)


def _png_snapshot(root: Path) -> set[tuple[str, int]]:
    return {
        (str(p.relative_to(root)), p.stat().st_mtime_ns)
        for p in root.rglob("*.png")
    }


def _newest_new_png(root: Path, before: set[tuple[str, int]]) -> bytes | None:
    fresh = [
        p for p in root.rglob("*.png")
        if (str(p.relative_to(root)), p.stat().st_mtime_ns) not in before
    ]
    if not fresh:
        return None
    fresh.sort(key=lambda p: (p.stat().st_mtime_ns, str(p)))
    return fresh[-1].read_bytes()


def _tail(text: str, max_bytes: int) -> str:
    encoded = text.encode("utf-8", errors="replace")
    if len(encoded) <= max_bytes:
        return text
    return encoded[-max_bytes:].decode("utf-8", errors="replace")


def _run_child(argv: list[str], cwd: Path, limits: Limits) -> tuple[int | None, str, str, float]:
    """Run a child process with a wall timeout; kill its whole group on expiry.

    Returns (returncode, stdout, stderr, duration); returncode None means
    the timeout fired.
    """
    started = time.monotonic()
    proc = subprocess.Popen(
        argv,
        cwd=str(cwd),
        env=_scrubbed_env(),
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        start_new_session=True,
    )
    try:
        out, err = proc.communicate(timeout=limits.wall_timeout)
        rc: int | None = proc.returncode
    except subprocess.TimeoutExpired:
        log.debug("wall timeout after %.1fs; killing process group %d",
                  limits.wall_timeout, proc.pid)
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        out, err = proc.communicate()
        rc = None
    duration = time.monotonic() - started
    return (
        rc,
        out.decode("utf-8", errors="replace"),
        err.decode("utf-8", errors="replace"),
        duration,
    )


class ProcessBackend:
    """Executes scripts with a real interpreter in the workspace."""

    script_name = "script.py"

    def __init__(self, interpreter: str = sys.executable):
        if not interpreter or not (os.path.exists(interpreter) or shutil.which(interpreter)):
            raise BackendUnavailableError(f"interpreter {interpreter!r} not found")
        self.interpreter = interpreter

    def run(self, script, ws: Workspace, limits: Limits) -> ExecutionOutcome:
        code = script.code
        if "savefig" not in code:
            code += _FORCED_SAVE_EPILOGUE
        script_path = ws.root / self.script_name
        script_path.write_text(code, encoding="utf-8")
        before = _png_snapshot(ws.root)

        rc, _out, err, duration = _run_child(
            [self.interpreter, self.script_name], ws.root, limits
        )
        if rc is None:
            return ExecutionOutcome(
                status=STATUS_TIMEOUT,
                traceback=f"TimeoutError: execution exceeded {limits.wall_timeout:g}s wall-clock limit",
                duration=duration,
            )
        stderr_tail = _tail(err, limits.max_output_bytes)
        if rc == 0:
            image = _newest_new_png(ws.root, before)
            if image is None:
                return ExecutionOutcome(
                    status=STATUS_RAISED, traceback=_NO_IMAGE_TRACEBACK, duration=duration
                )
            return ExecutionOutcome(status=STATUS_OK, image=image, duration=duration)
        if rc > 0 and stderr_tail.strip():
            return ExecutionOutcome(status=STATUS_RAISED, traceback=stderr_tail, duration=duration)
        return ExecutionOutcome(
            status=STATUS_CRASHED,
            traceback=stderr_tail.strip() or f"Crashed: process exited with code {rc} and no stderr",
            duration=duration,
        )


class ShimBackend:
    """Executes scripts through the external shim runner.

    The shim is materialized into each workspace and invoked as
    ``interpreter <shim> <script>``; its structured result record (the
    final sentinel-prefixed stdout line) becomes the ExecutionOutcome, so
    no stderr heuristics are involved.
    """

    script_name = "script.py"
    shim_name = "__chartforge_shim.py"

    def __init__(self, shim_script: str | Path, interpreter: str = sys.executable):
        self.shim_script = Path(shim_script)
        if not self.shim_script.is_file():
            raise BackendUnavailableError(f"shim runner not found at {self.shim_script}")
        if not interpreter or not (os.path.exists(interpreter) or shutil.which(interpreter)):
            raise BackendUnavailableError(f"interpreter {interpreter!r} not found")
        self.interpreter = interpreter

    def run(self, script, ws: Workspace, limits: Limits) -> ExecutionOutcome:
        (ws.root / self.script_name).write_text(script.code, encoding="utf-8")
        shutil.copyfile(self.shim_script, ws.root / self.shim_name)

        rc, out, err, duration = _run_child(
            [self.interpreter, self.shim_name, self.script_name], ws.root, limits
        )
        if rc is None:
            return ExecutionOutcome(
                status=STATUS_TIMEOUT,
                traceback=f"TimeoutError: execution exceeded {limits.wall_timeout:g}s wall-clock limit",
                duration=duration,
            )
        result = self._parse_sentinel(out)
        if result is None:
            detail = _tail(err, limits.max_output_bytes).strip()
            return ExecutionOutcome(
                status=STATUS_CRASHED,
                traceback=detail or f"Crashed: shim exited with code {rc} and no result record",
                duration=duration,
            )
        status = result.get("status")
        if status == "ok":
            image = self._read_image(ws.root, result.get("images") or [])
            if image is None:
                return ExecutionOutcome(
                    status=STATUS_RAISED, traceback=_NO_IMAGE_TRACEBACK, duration=duration
                )
            return ExecutionOutcome(status=STATUS_OK, image=image, duration=duration)
        if status == "raised":
            tb = _tail(result.get("traceback") or "", limits.max_output_bytes)
            return ExecutionOutcome(
                status=STATUS_RAISED,
                traceback=tb or "Raised: shim reported a failure without a traceback",
                duration=duration,
            )
        if status == "timeout-internal":
            return ExecutionOutcome(
                status=STATUS_TIMEOUT,
                traceback="TimeoutError: shim reported an internal timeout",
                duration=duration,
            )
        return ExecutionOutcome(
            status=STATUS_CRASHED,
            traceback=f"Crashed: shim reported unknown status {status!r}",
            duration=duration,
        )

    @staticmethod
    def _parse_sentinel(stdout_text: str) -> dict | None:
        record = None
        for line in stdout_text.splitlines():
            if line.startswith(SHIM_SENTINEL):
                try:
                    record = json.loads(line[len(SHIM_SENTINEL):])
                except json.JSONDecodeError:
                    record = None
        return record if isinstance(record, dict) else None

    @staticmethod
    def _read_image(root: Path, names: list[str]) -> bytes | None:
        for name in reversed(names):
            candidate = root / name
            if candidate.is_file():
                return candidate.read_bytes()
        return None


class FakeBackend:
    """Replays scripted outcomes in order; exhausted calls use ``default``.

    ``default`` may be an ExecutionOutcome or a callable taking the script
    and returning one.  With neither outcomes left nor a default, running
    is an error.
    """

    def __init__(self, outcomes=(), default=None):
        self._outcomes = list(outcomes)
        self._default = default
        self._lock = threading.Lock()
        self.calls = 0

    def run(self, script, ws: Workspace, limits: Limits) -> ExecutionOutcome:
        with self._lock:
            self.calls += 1
            if self._outcomes:
                return self._outcomes.pop(0)
        if callable(self._default):
            return self._default(script)
        if self._default is not None:
            return self._default
        raise BackendUnavailableError("fake backend exhausted its scripted outcomes")


# Plausible failure tracebacks for the deterministic fake backend; these
# mirror failure shapes commonly seen from generated chart code.
CANNED_TRACEBACKS = (
    'Traceback (most recent call last):\n  File "script.py", line 7, in <module>\n'
    "    plt.stem(x, y, use_line_collection=True)\n"
    "TypeError: stem() got an unexpected keyword argument 'use_line_collection'",
    'Traceback (most recent call last):\n  File "script.py", line 9, in <module>\n'
    "    ax.plot_surface(x, y, z)\n"
    "TypeError: Argument Z must be 2-dimensional.",
    'Traceback (most recent call last):\n  File "script.py", line 3, in <module>\n'
    "    data = np.arange(10)\n"
    "NameError: name 'np' is not defined",
    'Traceback (most recent call last):\n  File "script.py", line 1, in <module>\n'
    "    import mplfinance as mpf\n"
    "ModuleNotFoundError: No module named 'mplfinance'",
    'Traceback (most recent call last):\n  File "script.py", line 2, in <module>\n'
    "    import squarify\n"
    "ModuleNotFoundError: No module named 'squarify'",
    'Traceback (most recent call last):\n  File "script.py", line 5, in <module>\n'
    '    df = pd.DataFrame({"a": a, "b": b})\n'
    "ValueError: All arrays must be of the same length",
)


class DeterministicFakeBackend:
    """Outcome is a pure function of the script text.

    Roughly one in eight scripts fails with a canned traceback; everything
    else succeeds with a tiny PNG.  Because repair rewrites change the
    script text, repaired attempts usually pass, which gives mock pipeline
    runs a realistic mix of clean drafts, repaired tasks, and failures.
    """

    def __init__(self, failure_modulus: int = 8):
        self.failure_modulus = failure_modulus

    def run(self, script, ws: Workspace, limits: Limits) -> ExecutionOutcome:
        digest = int.from_bytes(
            hashlib.sha1(script.code.encode("utf-8")).digest()[:8], "big"
        )
        if digest % self.failure_modulus == 0:
            tb = CANNED_TRACEBACKS[(digest // self.failure_modulus) % len(CANNED_TRACEBACKS)]
            return raised_outcome(tb)
        return ok_outcome()
