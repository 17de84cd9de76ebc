import pytest

ACCEPTANCE = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run the long Monte Carlo tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def record():
    """Register one acceptance line: ``record(key, ok, detail)``."""

    def _record(key, ok, detail):
        line = f"{key} {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[key] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:].split()[0].rstrip(":"))):
        terminalreporter.write_line(ACCEPTANCE[key])
