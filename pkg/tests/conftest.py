import numpy as np
import pytest

from rbmcf.model import RbmParams, VisibleState

_ACCEPTANCE_LINES = []


def random_params(seed, m, F, K, scale=1.0):
    g = np.random.default_rng(seed)
    return RbmParams(g.normal(0, scale, (m, F, K)), g.normal(0, scale, (m, K)), g.normal(0, scale, F))


def random_visible(seed, m, K, full=False):
    g = np.random.default_rng(seed)
    if full:
        items = np.arange(m)
    else:
        n = int(g.integers(1, m + 1))
        items = np.sort(g.choice(m, size=n, replace=False))
    return VisibleState(items, g.integers(1, K + 1, size=items.size))


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def enumerated_conditional(observed, item, p):
    """p(v_item = k | observed) for k = 1..K by summing exp(-E) over all 2^F hidden states.

    ``observed`` maps item -> level. Written directly from the energy function
    so it shares no code with the scoring routines under test.
    """
    import itertools

    H = np.array(list(itertools.product((0.0, 1.0), repeat=p.F)))
    base = H @ p.c
    for i, k in observed.items():
        base = base + H @ p.W[i, :, k - 1] + p.b[i, k - 1]
    log_joint = np.array([
        np.logaddexp.reduce(base + H @ p.W[item, :, k] + p.b[item, k]) for k in range(p.K)
    ])
    log_joint -= np.logaddexp.reduce(log_joint)
    return np.exp(log_joint)
