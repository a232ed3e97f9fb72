import pytest
from hypothesis import settings

from mlmc_disc import _backend

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

BACKENDS = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


@pytest.fixture
def numpy_backend():
    previous = _backend.set_backend("numpy")
    yield
    _backend.set_backend(previous)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def acceptance_lines(config):
    if ACCEPTANCE_KEY not in config.stash:
        config.stash[ACCEPTANCE_KEY] = []
    return config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
