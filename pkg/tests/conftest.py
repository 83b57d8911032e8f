import numpy as np
import pytest

from maskedit.backends import create_toy_backend


def pytest_runtest_logreport(report):
    # one visible verdict line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1].removeprefix("test_")
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {name}: {verdict}", flush=True)


@pytest.fixture(scope="session")
def toy64():
    """One shared toy backend bound to 64x64 images."""
    return create_toy_backend((64, 64))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def rect_mask(hw, top, left, height, width):
    m = np.zeros(hw, dtype=np.uint8)
    m[top : top + height, left : left + width] = 1
    return m
