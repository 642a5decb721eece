import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from naturalcl.data import find_mnist  # noqa: E402

_OUTCOME = pytest.StashKey[str]()
_DETAIL = pytest.StashKey[str]()
_ACCEPTANCE: list[pytest.Item] = []


def pytest_addoption(parser):
    parser.addoption("--full", action="store_true", default=False,
                     help="run the long domain-incremental reproduction")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion, reported in the summary")


def pytest_collection_modifyitems(config, items):
    have_mnist = find_mnist() is not None
    full = config.getoption("--full")
    for item in items:
        if "mnist" in item.keywords and not have_mnist:
            item.add_marker(pytest.mark.skip(reason="MNIST IDX files not found (set NATURALCL_DATA_DIR)"))
        if "full" in item.keywords and not full:
            item.add_marker(pytest.mark.skip(reason="long run; enable with --full"))
        if item.get_closest_marker("acceptance"):
            _ACCEPTANCE.append(item)


@pytest.fixture
def criterion(request):
    """Attach a measured-value note to the acceptance line of the running test."""

    def record(detail: str):
        request.node.stash[_DETAIL] = detail

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or rep.skipped or rep.failed:
        if rep.when == "call" or _OUTCOME not in item.stash:
            item.stash[_OUTCOME] = rep.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for item in _ACCEPTANCE:
        outcome = item.stash.get(_OUTCOME, "not run")
        mark = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, "----")
        label = item.get_closest_marker("acceptance").args[0]
        detail = item.stash.get(_DETAIL, "")
        terminalreporter.write_line(f"[{mark}] {label}" + (f"  ({detail})" if detail else ""))
