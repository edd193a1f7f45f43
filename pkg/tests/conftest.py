import pytest

from tinycfa import corpus
from tinycfa.assembler import MemoryLayout
from tinycfa.pipeline import build_corpus


@pytest.fixture(scope="session")
def layout_default():
    return MemoryLayout()


@pytest.fixture(scope="session")
def builds():
    return {name: build_corpus(name) for name in corpus.NAMES}


@pytest.fixture(scope="session", autouse=True)
def mac_known_answers():
    """The MAC must reproduce its standard vectors before any protocol test."""
    from tinycfa.attestation import mac_self_test

    assert mac_self_test(), "HMAC-SHA256 known-answer test failed"


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, line = results[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {line}")
