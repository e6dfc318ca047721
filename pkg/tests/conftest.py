import numpy as np
import pytest

from dbflu.model import simulate_panel
from dbflu.priors import TruncatedMvnPrior

T = 35
# common discrepancy path used for synthetic panels: near zero mid-season,
# reaching logit(~0.0103) at the last week
SYNTH_MU = -4.56 * 0.9 ** (T - 1 - np.arange(T))


@pytest.fixture(scope="session")
def gen_prior():
    return TruncatedMvnPrior([0.005, 0.8, 0.72], np.diag([0.0015**2, 0.08**2, 0.02**2]))


def synthetic_panel(prior, seasons, seed):
    return simulate_panel(tuple(seasons), prior, np.random.default_rng(seed), mu=SYNTH_MU)


@pytest.fixture(scope="session")
def synth(gen_prior):
    """Eight model-generated seasons with their generating state."""
    return synthetic_panel(gen_prior, range(2001, 2009), seed=20)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
