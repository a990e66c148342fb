import pytest

from dropforge.annotator import annotate_example
from dropforge.harness import bundled_dataset_bytes
from dropforge.ingest import examples_from_dataset, parse_drop_dataset


@pytest.fixture(scope="session")
def census():
    """The bundled census passage, keyed q1..q5."""
    examples = examples_from_dataset(parse_drop_dataset(bundled_dataset_bytes()))
    return {ex.example_id.rsplit("-", 1)[1]: ex for ex in examples}


@pytest.fixture(scope="session")
def census_annotations(census):
    return {k: annotate_example(ex) for k, ex in census.items()}


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; printed in the terminal summary."""

    def record(label, ok, detail=""):
        request.config.stash.setdefault(_ACCEPTANCE, []).append((label, ok, detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    rows = config.stash.get(_ACCEPTANCE, [])
    if not rows:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, ok, detail in rows:
        verdict = {True: "PASS", False: "FAIL", None: "SKIP"}[ok]
        terminalreporter.write_line(f"{verdict}  {label}  {detail}".rstrip())
