import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance results, printed as one line per criterion at the end of the run
_CRITERIA: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_COUNT = 9


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for rs in terminalreporter.stats.values() for r in rs if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in _CRITERIA:
            passed, detail = _CRITERIA[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL (no result recorded)")
