"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

TESTS_DIR = Path(__file__).resolve().parent
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))

from corpus import CORPUS  # noqa: E402

try:
    from hypothesis import settings

    settings.register_profile("suite", deadline=None, max_examples=60)
    settings.load_profile("suite")
except ImportError:  # pragma: no cover - hypothesis is a test dependency
    pass


# --- acceptance criterion reporting -------------------------------------------

_CRITERION_LINES: list[str] = []


def record_criterion(number: int, passed: bool, note: str = "") -> None:
    """Record one acceptance-criterion verdict for the terminal summary."""
    line = f"[criterion {number}] {'PASS' if passed else 'FAIL'}"
    if note:
        line += f" - {note}"
    _CRITERION_LINES.append(line)
    print(line, file=sys.stderr)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERION_LINES):
            terminalreporter.write_line(line)


# --- helpers -------------------------------------------------------------------

def write_app(root: Path, files: dict[str, str]) -> Path:
    """Materialize an application's files below root and return root."""
    for rel, text in files.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return root


def flatten_findings(report: dict) -> set[tuple]:
    """(file, sink line, source line) triples of a resolved report."""
    out = set()
    for entry in report["files"]:
        for finding in entry["findings"]:
            out.add((entry["file"], finding["sink"]["line"],
                     finding["source"]["line"]))
    return out


def finding_paths(report: dict) -> set[tuple]:
    """Full node paths of a resolved report, for exact comparisons."""
    out = set()
    for entry in report["files"]:
        for finding in entry["findings"]:
            path = tuple(
                (n["token"], n["line"], n["depth"], n["order"], n["type"])
                for n in finding["path"]
            )
            out.add((entry["file"], path))
    return out


@pytest.fixture(scope="session")
def default_rules():
    from cca import load_rules

    return load_rules()


@pytest.fixture(scope="session")
def default_tk():
    from cca import load_task_knowledge

    return load_task_knowledge()


@pytest.fixture()
def fig_app(tmp_path):
    root = tmp_path / "fig_app"
    root.mkdir()
    return write_app(root, CORPUS["fig_flow"])


@pytest.fixture()
def branching_app(tmp_path):
    root = tmp_path / "branching_app"
    root.mkdir()
    return write_app(root, CORPUS["branching"])
