import pytest

from pgsr.library import Library

NGUYEN_OPS = ("add", "sub", "mul", "div", "sin", "cos", "exp", "log")


@pytest.fixture
def lib():
    return Library.from_names(NGUYEN_OPS, n_vars=1)


@pytest.fixture
def lib2():
    return Library.from_names(NGUYEN_OPS + ("sqrt",), n_vars=2)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.REPORT:
            terminalreporter.write_line(line)
