import pytest

_KEY = pytest.StashKey[dict]()


class Criterion:
    def __init__(self, results, number, title):
        self.results, self.number, self.title = results, number, title

    def record(self, ok, detail=""):
        self.results[self.number] = (self.title, bool(ok), detail)
        return ok


@pytest.fixture
def criterion(request):
    """Records one acceptance line; a test that errors before recording counts as FAIL."""
    results = request.config.stash.setdefault(_KEY, {})
    marker = request.node.get_closest_marker("criterion")
    number, title = marker.args
    c = Criterion(results, number, title)
    yield c
    if number not in results:
        results[number] = (title, False, "error before a result was recorded")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
