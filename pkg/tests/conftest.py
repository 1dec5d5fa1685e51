import pytest

from perfmut.adapters import EmbeddedAdapter
from perfmut.catalog import FixtureSpec, generate_fixture, retrieve_metadata, sample_values

ACCEPTANCE_LINES = []

@pytest.fixture(scope="session")
def small_db():
    """Scale-0.01 SCOTT fixture shared by read-only tests."""
    adapter = EmbeddedAdapter()
    generate_fixture(adapter, FixtureSpec(0.01, seed=0))
    schema = retrieve_metadata(adapter)
    samples = sample_values(adapter, schema, seed=0)
    yield adapter, schema, samples
    adapter.close()


@pytest.fixture
def record_acceptance():
    def record(number, name, passed, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name}  {detail}".rstrip())
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
