import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "40")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("repo")

# criterion number -> (passed, detail, seconds, limit)
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str, float, float]] = {}


@pytest.fixture
def record_acceptance():
    def record(number: int, passed: bool, detail: str, seconds: float, limit: float) -> None:
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail, seconds, limit)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail, seconds, limit = ACCEPTANCE_RESULTS[number]
        timing = "ok" if seconds <= limit else "over budget"
        tr.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} | {detail} | {seconds:.2f}s of {limit:.0f}s ({timing})"
        )
