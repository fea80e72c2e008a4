from __future__ import annotations

import functools
from pathlib import Path

import pytest

from autolevels import run

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (verdict, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@functools.lru_cache(maxsize=None)
def shipped_run(name: str, variant: str | None = None, bus: bool = True):
    """One cached run per (scenario, variant, bus) for the whole session."""
    return run(name, variant=variant, bus_enabled=bus)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.passed_call = rep.passed


@pytest.fixture
def record(request):
    """``record(n, detail)`` files the calling test's outcome as criterion ``n``."""
    slot = {}
    yield lambda n, detail: slot.update(n=n, detail=detail)
    if slot:
        ok = getattr(request.node, "passed_call", False)
        ACCEPTANCE[slot["n"]] = ("PASS" if ok else "FAIL", slot["detail"])


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
