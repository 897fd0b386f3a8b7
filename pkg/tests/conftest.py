from __future__ import annotations

import pytest

from jurybench.domain import load_case_file, load_personas


@pytest.fixture(scope="session")
def personas():
    return load_personas()


@pytest.fixture(scope="session")
def case_file():
    return load_case_file()


@pytest.fixture(autouse=True)
def _no_api_key(monkeypatch):
    # tests never reach a real endpoint
    monkeypatch.delenv("JURYBENCH_API_KEY", raising=False)
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    monkeypatch.delenv("JURYBENCH_BASE_URL", raising=False)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid or getattr(rep, "when", "call") not in ("call", "setup"):
                continue
            if outcome == "passed" and rep.when != "call":
                continue
            lines.append((nodeid.split("::")[-1], "PASS" if outcome == "passed" else "FAIL"))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(lines):
        terminalreporter.write_line(f"{status}  {name}")
