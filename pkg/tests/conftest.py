from pathlib import Path

import pytest

from bcqa.corpus import Chunk, Corpus
from bcqa.sparse import build_index

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def toy_corpus() -> Corpus:
    return Corpus((Chunk("C1", "the fire door"), Chunk("C2", "fire exit stairs"), Chunk("C3", "the the door")))


@pytest.fixture
def toy_index(toy_corpus):
    return build_index(toy_corpus)


# ---- acceptance summary: one line per criterion -----------------------------

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        crash = getattr(rep.longrepr, "reprcrash", None)
        detail = (crash.message.splitlines()[0] if crash else "failed") + (f" [{detail}]" if detail else "")
    _criteria.append((mark.args[0], mark.args[1], rep.outcome.upper(), detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, detail in sorted(_criteria):
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"AC{number} {verdict:4} {title}: {detail}")
