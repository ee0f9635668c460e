import pytest

_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def criterion(request):
    """Record and print one acceptance verdict, then assert it."""
    verdicts = request.config.stash[_VERDICTS]
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(number, title, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f": {detail}" if detail else "")
        verdicts[number] = line
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for n in sorted(verdicts):
            terminalreporter.write_line(verdicts[n])
