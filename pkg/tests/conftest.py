import pytest

TINY = """\
output.dir = out
synth = true
scenario.n_cols = 8
scenario.n_rows = 8
scenario.n_stations = 8
scenario.n_taxis = 40
scenario.duration_s = 3600
scenario.colocation_days = 1
seed.scenario = 5
seed.calibration_split = 1
seed.cv_folds = 2
seed.forest = 3
fuse.hp.gbt.n_trees = 50
fuse.hp.forest.n_trees = 30
maps.png = true
"""


@pytest.fixture
def tiny_manifest(tmp_path):
    """A small synthetic run that finishes in seconds."""
    p = tmp_path / "manifest.txt"
    p.write_text(TINY, encoding="utf-8")
    return p


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        prev = _CRITERIA.get(n, (title, "PASS"))[1]
        status = "PASS" if rep.passed and prev == "PASS" else "FAIL"
        _CRITERIA[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
