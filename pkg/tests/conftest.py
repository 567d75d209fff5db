import pytest

from cragpipe.llm import LLMClient, LLMConfig
from cragpipe.testkit.fixtures import make_suite


@pytest.fixture
def suite():
    """Started stub suite with the synthetic rule set and no KG fixtures."""
    with make_suite() as s:
        yield s


@pytest.fixture
def suite_factory():
    started = []

    def factory(**kwargs):
        s = make_suite(**kwargs).start()
        started.append(s)
        return s

    yield factory
    for s in started:
        s.stop()


def make_llm(url, **kwargs):
    cfg = LLMConfig(base_url=url, **{"max_attempts": 1, "backoff_ms": 1, **kwargs})
    return LLMClient(cfg)


@pytest.fixture
def llm_for():
    clients = []

    def factory(url, **kwargs):
        c = make_llm(url, **kwargs)
        clients.append(c)
        return c

    yield factory
    for c in clients:
        c.close()


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
