import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


class CriterionRecorder:
    """Collects one verdict per acceptance criterion; printed in the terminal summary."""

    def __call__(self, number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        prev = _CRITERIA.get(number)
        if prev is None or not passed:
            _CRITERIA[number] = (bool(passed) and (prev is None or prev[0]), detail)


@pytest.fixture
def criterion():
    return CriterionRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
