import numpy as np
import pytest

from fairauc.dataset import GAUSSIAN2D_REFERENCE, Dataset, synth_gaussian2d


def random_dataset(rng, n=60, d=3, p_pos=0.5, p_a=0.5, min_per_stratum=1):
    """Random labelled, grouped dataset with every stratum populated."""
    while True:
        y = np.where(rng.random(n) < p_pos, 1, -1)
        g = (rng.random(n) >= p_a).astype(int)
        ds = Dataset(rng.standard_normal((n, d)), y, g)
        if min(ds.counts().values()) >= min_per_stratum:
            return ds


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def gaussian_synth():
    return synth_gaussian2d(GAUSSIAN2D_REFERENCE, seed=1)


# --------------------------------------------------------------------------
# acceptance summary: one line per criterion from the actual test outcomes
# --------------------------------------------------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "outcomes": []})
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        entry["outcomes"].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        outs = entry["outcomes"]
        if "failed" in outs:
            status = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            status = "SKIP"
        elif outs:
            status = "PASS"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(f"criterion {number:2d}: {status:4s} {entry['title']}")
