import numpy as np
import pytest

from elastitune.stream_model import make_rng


@pytest.fixture
def rng():
    return make_rng(20261016)


def random_stream(rng, n_items, tau, alpha=1.0):
    p = 1.0 / np.arange(1, n_items + 1) ** alpha
    return rng.choice(n_items, size=tau, p=p / p.sum())


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
