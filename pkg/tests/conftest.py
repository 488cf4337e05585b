import pytest

_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the test body fills in ``detail``."""
    entry = {"name": request.node.name, "detail": ""}
    yield entry
    rep = getattr(request.node, "rep_call", None)
    entry["ok"] = bool(rep is not None and rep.passed)
    _VERDICTS.append(entry)


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(_VERDICTS, key=lambda e: e["name"]):
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'}  {e['name']}: {e['detail']}")
