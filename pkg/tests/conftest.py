import json
from pathlib import Path

import pytest

ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture(scope="session")
def oracle_values():
    return json.loads((Path(__file__).parent / "data" / "oracle_values.json").read_text())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
