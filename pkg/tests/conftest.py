from pathlib import Path

import numpy as np
import pytest

from fedbayes.dataset import DiscreteDataset, Schema
from fedbayes.generative import fit_counts, normalize
from fedbayes.weighted import cll

DATA_DIR = Path(__file__).resolve().parents[1] / "data"

# name -> (m, n, o) as published for the benchmark corpus
CORPUS = {
    "house-votes-84": (435, 16, 2),
    "tic-tac-toe": (958, 9, 2),
    "flare": (1066, 11, 6),
    "car": (1728, 6, 4),
    "splice": (3190, 60, 3),
    "kr-vs-kp": (3196, 36, 2),
    "mushroom": (8124, 22, 2),
}

_ACCEPTANCE_LINES = []


def corpus_path(name):
    return DATA_DIR / f"{name}.arff"


def random_dataset(rng, m=20, n=None, o=None, max_card=4, missing_rate=0.0):
    """Small random categorical dataset; every class appears at least once."""
    n = n if n is not None else int(rng.integers(1, 5))
    o = o if o is not None else int(rng.integers(2, 4))
    cards = rng.integers(1, max_card + 1, size=n)
    X = np.column_stack([rng.integers(0, c, size=m) for c in cards])
    y = rng.integers(0, o, size=m)
    y[:o] = np.arange(o)
    missing = rng.random((m, n)) < missing_rate
    schema = Schema.from_cardinalities(cards.tolist(), o)
    return DiscreteDataset(schema, X, y, missing)


def hand_dataset():
    """One feature {a, b}, classes {+, -}: (a,+), (a,+), (b,+), (b,-)."""
    schema = Schema(("f",), (("a", "b"),), ("+", "-"))
    return DiscreteDataset(schema, [[0], [0], [1], [1]], [0, 0, 0, 1])


@pytest.fixture
def hand():
    return hand_dataset()


@pytest.fixture
def acceptance_report():
    def report(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gradient_check(seed, step=1e-5, rel=1e-6, abs_floor=1e-8):
    """Compare the analytic CLL gradient with central differences.

    Returns ``(n_bad, max_abs_err, max_rel_err)`` for one random (table,
    weights, 20-instance) triple. A coordinate is bad when it violates both
    the relative and the absolute bound. The relative error of a coordinate
    whose analytic value is exactly 0 is 0 if the difference quotient is
    also 0, else inf.
    """
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, m=20, missing_rate=0.1 if seed % 3 == 0 else 0.0)
    params = normalize(fit_counts(data), alpha=float(rng.choice([0.5, 1.0, 2.0])))
    w = rng.uniform(-1.0, 2.0, size=params.layout.size)
    grad = cll(params, w, data.X, data.y, data.missing).gradient
    fd = np.empty_like(grad)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = step
        hi = cll(params, w + e, data.X, data.y, data.missing).value
        lo = cll(params, w - e, data.X, data.y, data.missing).value
        fd[i] = (hi - lo) / (2 * step)
    err = np.abs(grad - fd)
    bad = (err > rel * np.abs(grad)) & (err > abs_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(err == 0, 0.0, err / np.abs(grad))
    return int(bad.sum()), float(err.max()), float(rel_err.max())
