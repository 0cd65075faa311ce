import numpy as np
import pytest

from fedbotnet.dataset import SplitSpec, SyntheticFederationSpec, generate_synthetic_federation, split

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[report.nodeid] = (marker, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance = (m.args[0], m.args[1], item.name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title, name), outcome in sorted(_ACCEPTANCE.values(), key=lambda v: (v[0][0], v[0][2])):
        terminalreporter.write_line(f"criterion {number}: {outcome.upper():7s} {title} [{name}]")


@pytest.fixture(scope="session")
def small_federation():
    """Seven small synthetic nodes split 80/20."""
    spec = SyntheticFederationSpec(n_nodes=7, rows_per_node=440, n_features=12, seed=11)
    nodes = generate_synthetic_federation(spec)
    return [split(ds, SplitSpec(seed=ds.node_id)) for ds in nodes]


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)
