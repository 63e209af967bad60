import pytest

from isotorus.ifs import BUILTIN_IFS, AffineIFS, IntervalUnion


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale numerical checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def example1() -> AffineIFS:
    return AffineIFS.from_dict(BUILTIN_IFS["example1"])


@pytest.fixture
def two_bands() -> IntervalUnion:
    return IntervalUnion.from_bands([(-1.0, -0.3), (0.3, 1.0)])
