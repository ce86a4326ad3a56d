import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from btdmp import pipeline, sim  # noqa: E402


@pytest.fixture(scope="session")
def combined_demos():
    return [d for op in ("O1", "O2", "O3") for d in sim.generate_synthetic_demos(op, noise_seed=0)]


@pytest.fixture(scope="session")
def combined(combined_demos):
    """Fit and learn on the three operations merged into one dataset."""
    return pipeline.fit_and_learn(combined_demos)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
