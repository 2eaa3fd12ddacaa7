"""Behavioral tests for the shim runner, including fidelity against direct
interpreter execution: for the same script, status and traceback must match
what `python script.py` itself does."""

from __future__ import annotations

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

SHIM = Path(__file__).resolve().parent / "shim_runner.py"
SENTINEL = "CHARTFORGE_RESULT:"

CLEAN_SCRIPTS = {
    "save_bar": (
        "import matplotlib.pyplot as plt\n"
        "plt.bar([0, 1, 2], [3, 1, 2])\n"
        "plt.savefig('bar.png')\n"
    ),
    "show_line": (
        "import matplotlib.pyplot as plt\n"
        "plt.plot([0, 1], [1, 0])\n"
        "plt.show()\n"
    ),
    "no_display": (
        "import matplotlib.pyplot as plt\n"
        "fig, ax = plt.subplots()\n"
        "ax.scatter([1, 2], [2, 1])\n"
    ),
    "pandas_chart": (
        "import matplotlib.pyplot as plt\n"
        "import pandas as pd\n"
        "df = pd.DataFrame({'x': [1, 2, 3], 'y': [2, 4, 1]})\n"
        "df.plot(x='x', y='y')\n"
        "plt.savefig('frame.png')\n"
    ),
    "two_figures": (
        "import matplotlib.pyplot as plt\n"
        "plt.figure(); plt.plot([1, 2])\n"
        "plt.figure(); plt.plot([2, 1])\n"
        "plt.show()\n"
    ),
}

RAISING_SCRIPTS = {
    "zero_division": "x = 1\ny = x / 0\n",
    "name_error": "print(undefined_variable)\n",
    "missing_module": "import module_that_does_not_exist_anywhere\n",
    "syntax_error": "def broken(:\n    pass\n",
    "key_error_in_function": (
        "def lookup(d):\n"
        "    return d['missing']\n"
        "lookup({})\n"
    ),
}

SCRIPT_NAME = "cand.py"


def run_direct(workdir: Path) -> subprocess.CompletedProcess:
    env = {k: os.environ[k] for k in ("PATH", "HOME", "LANG") if k in os.environ}
    env["MPLBACKEND"] = "Agg"
    return subprocess.run(
        [sys.executable, SCRIPT_NAME],
        cwd=workdir, env=env, capture_output=True, text=True, timeout=120,
    )


def run_shim(workdir: Path) -> subprocess.CompletedProcess:
    env = {k: os.environ[k] for k in ("PATH", "HOME", "LANG") if k in os.environ}
    return subprocess.run(
        [sys.executable, str(SHIM), SCRIPT_NAME],
        cwd=workdir, env=env, capture_output=True, text=True, timeout=120,
    )


def sentinel_record(stdout: str) -> dict:
    lines = [line for line in stdout.splitlines() if line.startswith(SENTINEL)]
    assert len(lines) == 1, f"expected exactly one sentinel line, got {len(lines)}"
    return json.loads(lines[0][len(SENTINEL):])


@pytest.mark.parametrize("name,code", sorted(CLEAN_SCRIPTS.items()))
def test_clean_scripts_match_direct_execution_and_yield_png(tmp_path, name, code):
    (tmp_path / SCRIPT_NAME).write_text(code, encoding="utf-8")
    direct = run_direct(tmp_path)
    assert direct.returncode == 0, direct.stderr

    result = run_shim(tmp_path)
    record = sentinel_record(result.stdout)
    assert record["status"] == "ok"
    assert result.returncode == 0
    assert record["images"], "clean chart script must yield an image"
    produced = [tmp_path / image for image in record["images"]]
    assert any(p.suffix == ".png" and p.is_file() for p in produced)
    assert (tmp_path / record["images"][-1]).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert record["duration_ms"] >= 0


@pytest.mark.parametrize("name,code", sorted(RAISING_SCRIPTS.items()))
def test_raising_scripts_reproduce_interpreter_traceback(tmp_path, name, code):
    (tmp_path / SCRIPT_NAME).write_text(code, encoding="utf-8")
    direct = run_direct(tmp_path)
    assert direct.returncode != 0

    result = run_shim(tmp_path)
    record = sentinel_record(result.stdout)
    assert record["status"] == "raised"
    assert result.returncode == 1
    assert record["traceback"] == direct.stderr


def test_script_stdout_passes_through(tmp_path):
    (tmp_path / SCRIPT_NAME).write_text(
        "print('hello from the script')\n"
        "import matplotlib.pyplot as plt\n"
        "plt.plot([1])\n"
        "plt.savefig('x.png')\n",
        encoding="utf-8",
    )
    result = run_shim(tmp_path)
    assert "hello from the script" in result.stdout
    sentinel_record(result.stdout)


def test_missing_script_exits_2_without_sentinel(tmp_path):
    result = run_shim(tmp_path)
    assert result.returncode == 2
    assert SENTINEL not in result.stdout
    assert "not found" in result.stderr


def test_clean_script_without_figure_reports_missing_image(tmp_path):
    (tmp_path / SCRIPT_NAME).write_text("x = 1 + 1\n", encoding="utf-8")
    result = run_shim(tmp_path)
    record = sentinel_record(result.stdout)
    assert record["status"] == "raised"
    assert "no image" in record["traceback"]


def test_acceptance_shim_fidelity(tmp_path):
    """Ten-script fidelity sweep: statuses and tracebacks match direct runs,
    clean scripts all yield a PNG, one sentinel line per run."""
    for name, code in sorted(CLEAN_SCRIPTS.items()) + sorted(RAISING_SCRIPTS.items()):
        workdir = tmp_path / name
        workdir.mkdir()
        (workdir / SCRIPT_NAME).write_text(code, encoding="utf-8")
        direct = run_direct(workdir)
        result = run_shim(workdir)
        record = sentinel_record(result.stdout)
        if direct.returncode == 0:
            assert record["status"] == "ok", name
            assert any(image.endswith(".png") for image in record["images"]), name
        else:
            assert record["status"] == "raised", name
            assert record["traceback"] == direct.stderr, name
    print("ACCEPTANCE PASS: shim fidelity (10 scripts, tracebacks byte-equal)")
