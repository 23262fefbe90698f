import pytest

from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE = {}


def record(criterion: int, name: str, passed: bool, detail: str = ""):
    ACCEPTANCE[criterion] = (name, bool(passed), detail)
    line = f"criterion {criterion} [{name}]: {'PASS' if passed else 'FAIL'}"
    print(line + (f" ({detail})" if detail else ""))


@pytest.fixture
def acceptance_record():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(
            f"criterion {k} [{name}]: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else ""))
