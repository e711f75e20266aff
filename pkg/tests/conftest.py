import pytest

from forgeloc.config import RunConfig
from forgeloc.datagen import CorpusSpec, generate_corpus


def tiny_config(**kw) -> RunConfig:
    base = dict(dim=8, dec_dim=4, heads=2, hotspot_k=3, batch_size=6, epochs=2, error_repeats=2, seed=3)
    base.update(kw)
    return RunConfig(**base).validate()


def tiny_spec(**kw) -> CorpusSpec:
    base = dict(n_videos=16, t_range=(16, 20), c_visual=4, c_audio=3, interval_len=(3, 6), seed=9)
    base.update(kw)
    return CorpusSpec(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_corpus(tiny_spec())


# -- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, title)`` are tallied per criterion and reported
# as one PASS/FAIL line at the end of the run, with any recorded measurements.

CRITERIA: dict[int, dict] = {}


def _entry(marker):
    n, title = marker.args
    return CRITERIA.setdefault(n, {"title": title, "passed": [], "notes": []})


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion this test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _entry(marker)["passed"].append(rep.passed)


@pytest.fixture
def note(request):
    """Attach a measurement line to the current test's criterion."""
    marker = request.node.get_closest_marker("criterion")
    entry = _entry(marker) if marker else {"notes": []}
    return entry["notes"].append


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        entry = CRITERIA[n]
        status = "PASS" if entry["passed"] and all(entry["passed"]) else "FAIL"
        terminalreporter.write_line(f"criterion {n} {status}: {entry['title']}")
        for line in entry["notes"]:
            terminalreporter.write_line(f"    {line}")
