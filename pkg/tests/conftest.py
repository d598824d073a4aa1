import numpy as np
import pytest

from classrescal import HyperParams, SynthSpec, generate_planted

# toy 5-user / 3-relation network; contains (u1, r2, u5)
FIG1_TRIPLES = [
    ("u1", "r1", "u2"),
    ("u2", "r2", "u3"),
    ("u3", "r3", "u4"),
    ("u1", "r2", "u5"),
    ("u4", "r1", "u1"),
    ("u5", "r3", "u2"),
    ("u2", "r2", "u4"),
    ("u3", "r1", "u5"),
    ("u4", "r1", "u5"),
    ("u5", "r3", "u3"),
]


def write_tsv(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def fig1_path(tmp_path):
    return write_tsv(tmp_path / "fig1.tsv", FIG1_TRIPLES)


@pytest.fixture(scope="session")
def planted_small():
    return generate_planted(SynthSpec(n_per_class=25, n_relations=3, p_intra=0.2, p_inter=0.03, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_params():
    return HyperParams(rank=3, k_neighbors=3, max_iter=30)


# acceptance reporting: one PASS/FAIL line per @pytest.mark.criterion(n, text)
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, text = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        ok = report.outcome == "passed"
        prev = _CRITERIA.get(number)
        _CRITERIA[number] = (text, ok and (prev is None or prev[1]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        text, ok = _CRITERIA[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {text}")
