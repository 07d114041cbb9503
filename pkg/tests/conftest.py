import numpy as np
import pytest

from biokex import netsim
from biokex.features import QuantizationConfig
from biokex.minutiae import PerturbationProfile, synthesize_dataset

_acceptance_lines: list[str] = []


def record_acceptance(line: str) -> None:
    """Collect one pass/fail line per acceptance criterion; echoed live and
    again in the terminal summary."""
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def ca_env():
    """Shared CA with two enrolled parties; RSA generation is the slow part,
    so build it once. Treated as read-only by tests."""
    registry = netsim.make_environment(4242)
    alice = netsim.make_enrolled_party(registry, "alice", 1001)
    bob = netsim.make_enrolled_party(registry, "bob", 1002)
    return registry, alice, bob


@pytest.fixture(scope="session")
def small_dataset():
    """8 subjects x 3 impressions with mild capture noise."""
    profile = PerturbationProfile(translation_sigma=2.0, rotation_sigma=4.0, drop_rate=0.05)
    return synthesize_dataset(8, 3, profile, n_minutiae=40, seed=99)


@pytest.fixture(scope="session")
def cfg12():
    return QuantizationConfig.for_np(12)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(7)
