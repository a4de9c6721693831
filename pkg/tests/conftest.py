import numpy as np
import pytest

from caqr.kg import KnowledgeGraph
from caqr.synthetic import random_triples


@pytest.fixture
def abc_graph():
    return KnowledgeGraph.from_labeled([("a", "r", "b"), ("a", "r", "c")])


@pytest.fixture
def small_graph():
    return KnowledgeGraph.from_labeled(random_triples(30, 4, 120, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record and print ``criterion N: PASS|FAIL detail``; the summary repeats every line."""
    store = request.config.stash.setdefault(CRITERIA, {})
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        store[number] = line
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(CRITERIA, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
