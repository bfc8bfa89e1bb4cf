import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"
CIFAR_TRAIN = DATA / "cifar10" / "data_batch_1_head.bin"
CIFAR_TEST = DATA / "cifar10" / "test_batch_head.bin"
MNIST = DATA / "mnist01"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number = marker.args[0]
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        previous = _criteria.get(number, (True, []))
        _criteria[number] = (previous[0] and not failed, previous[1] + [item.name])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, names = _criteria[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'} ({', '.join(names)})")


@pytest.fixture(scope="session")
def cifar():
    from ordlab.data import load_cifar10, subset_per_class

    train = subset_per_class(load_cifar10([CIFAR_TRAIN]), 100, seed=0)
    test = load_cifar10([CIFAR_TEST])
    return train, test


@pytest.fixture(scope="session")
def mnist01():
    from ordlab.data import load_mnist_idx

    train = load_mnist_idx(MNIST / "train-images-idx3-ubyte", MNIST / "train-labels-idx1-ubyte", num_classes=2)
    test = load_mnist_idx(MNIST / "test-images-idx3-ubyte", MNIST / "test-labels-idx1-ubyte", num_classes=2)
    return train, test
