import pytest
from hypothesis import settings

settings.register_profile("capwalk", deadline=None, max_examples=30, derandomize=True)
settings.load_profile("capwalk")


@pytest.fixture(scope="session")
def green5():
    from capwalk.green import get_green_table

    return get_green_table(5)


@pytest.fixture(scope="session")
def green4():
    from capwalk.green import get_green_table

    return get_green_table(4)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash[_ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
