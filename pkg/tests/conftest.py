import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict(request):
    """``verdict(id, ok, detail)`` records one acceptance line, then asserts ``ok``."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS[criterion] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda c: int(c[1:])):
        terminalreporter.write_line(_VERDICTS[key])
