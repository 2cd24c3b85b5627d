import numpy as np
import pytest

from ricnn.panel import DEFAULT_FACTOR_NAMES, FactorPanel, TimeStep


def make_panel(universes, factor_fn=None, return_fn=None):
    """Build a panel from a list of per-step stock-id lists.

    factor_fn(sid, t) -> 20 factors; return_fn(sid, t) -> return. Both default to
    deterministic pseudo-random values keyed on (sid, t).
    """
    def default_factors(sid, t):
        rng = np.random.default_rng([abs(hash(sid)) % 2**31, t])
        return rng.normal(size=20)

    def default_return(sid, t):
        rng = np.random.default_rng([abs(hash(sid)) % 2**31, t, 7])
        return 0.05 * rng.normal()

    factor_fn = factor_fn or default_factors
    return_fn = return_fn or default_return
    steps = []
    for t, ids in enumerate(universes, start=1):
        ids = sorted(ids)
        steps.append(TimeStep(t, ids, [factor_fn(s, t) for s in ids], [return_fn(s, t) for s in ids]))
    return FactorPanel(steps, DEFAULT_FACTOR_NAMES)


@pytest.fixture
def panel_factory():
    return make_panel


def write_csv(path, rows, header=None):
    header = header or ["stock", "t", *DEFAULT_FACTOR_NAMES, "return"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


@pytest.fixture
def csv_writer():
    return write_csv


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
