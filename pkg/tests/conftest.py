import itertools

import numpy as np
import pytest

from shaqlab.game import generate_convex_game


def brute_force_values(R, P, gamma):
    """Best value per state over every deterministic stationary policy (exact linear solves)."""
    n_states, n_actions = R.shape
    best = np.full(n_states, -np.inf)
    for policy in itertools.product(range(n_actions), repeat=n_states):
        idx = np.arange(n_states), np.array(policy)
        v = np.linalg.solve(np.eye(n_states) - gamma * P[idx], R[idx])
        best = np.maximum(best, v)
    return best


@pytest.fixture(scope="session")
def small_games():
    """A dozen generated convex games with mixed sizes."""
    rng = np.random.default_rng(1234)
    games = []
    for k in range(12):
        n = int(rng.integers(1, 4))
        games.append(generate_convex_game(n, int(rng.integers(1, 4)), int(rng.integers(1, 4)), seed=k))
    return games


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
