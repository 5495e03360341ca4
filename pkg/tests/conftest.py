import time
from pathlib import Path

import pytest

from hsaw.cli import main

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def hsaw(*argv) -> float:
    """Run one CLI command in-process; returns its CPU seconds."""
    t = time.process_time()
    code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"hsaw {' '.join(map(str, argv))} exited {code}")
    return time.process_time() - t


def run_pipeline(root: Path) -> dict:
    """The full synthetic experiment through the CLI. Returns CPU seconds per stage."""
    root.mkdir(parents=True, exist_ok=True)
    cpu = {}
    cpu["synth"] = hsaw("synth", "--scenario", 1, "--laps", 2, "--seed", 0, "--out", root / "scenario1")
    cpu["synth"] += hsaw("synth", "--scenario", 2, "--laps", 2, "--seed", 0, "--out", root / "scenario2")
    cpu["train-base"] = hsaw("train-base", "--data", root / "scenario1", "--subset", "straight",
                             "--seed", 0, "--out", root / "base")
    cpu["compare"] = hsaw("compare", "--train", root / "scenario1", "--test", root / "scenario2",
                          "--seed", 0, "--out", root / "compare")
    cpu["detect"] = hsaw("detect", "--model", root / "compare" / "hierarchy", "--data", root / "scenario1",
                         "--out", root / "train_signal.csv")
    cpu["detect"] += hsaw("detect", "--model", root / "compare" / "hierarchy", "--data", root / "scenario2",
                          "--out", root / "test_signal.csv")
    cpu["evaluate"] = hsaw("evaluate", "--signal", root / "test_signal.csv", "--data", root / "scenario2",
                           "--out", root / "report")
    return cpu


@pytest.fixture
def record():
    """Stores (passed, detail) for the summary, then returns the verdict for asserting."""
    def _record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (bool(ok), detail)
        return bool(ok)
    return _record


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline") / "a"
    return root, run_pipeline(root)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
