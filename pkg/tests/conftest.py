import pytest

from subriem.measures import ChainConfig, sample_measure, spec_from_dict


@pytest.fixture(scope="session")
def euclid_spec():
    return spec_from_dict({"group": "euclidean(1)", "p": 2, "alpha": 1})


@pytest.fixture(scope="session")
def h1_spec():
    return spec_from_dict({"group": "heisenberg1", "p": 2, "alpha": 1})


@pytest.fixture(scope="session")
def euclid_samples(euclid_spec):
    return sample_measure(euclid_spec, ChainConfig(n_samples=500, burn_in=200, n_chains=100, seed=101))


@pytest.fixture(scope="session")
def h1_samples(h1_spec):
    return sample_measure(h1_spec, ChainConfig(n_samples=200, burn_in=300, n_chains=100, seed=202))


CRITERIA_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA_KEY] = {}


@pytest.fixture
def criterion(request):
    """Call with (number, ok, detail) to log one acceptance line; returns ok."""
    book = request.config.stash[CRITERIA_KEY]

    def record(num, ok, detail=""):
        book[num] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    book = config.stash.get(CRITERIA_KEY, {})
    if not book:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(book):
        ok, detail = book[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
