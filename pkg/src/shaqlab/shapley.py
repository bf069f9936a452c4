"""Markov Shapley values: marginal contributions, exact and sampled tables, property checks."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .game import (
    CoalitionValueTable,
    MarkovConvexGame,
    VI_TOL,
    all_coalition_values,
    check_convexity,
    coalition_value_iteration,
    dummy_agents,
    joint_value_iteration,
    members,
    size,
    subsets_without,
    symmetric_pairs,
)

MAX_EXACT_AGENTS = 12
MAX_PERMUTATION_AGENTS = 8


def coalition_weight(n_agents: int, coalition_size: int) -> float:
    """Probability that a uniformly random ordering puts exactly this predecessor set before an agent."""
    if not 0 <= coalition_size <= n_agents - 1:
        raise ValueError(f"coalition size {coalition_size} outside [0, {n_agents - 1}]")
    return math.factorial(coalition_size) * math.factorial(n_agents - coalition_size - 1) / math.factorial(n_agents)


@dataclass(frozen=True)
class MarginalContribution:
    agent: int
    predecessor: int
    phi_v: np.ndarray
    phi_q: np.ndarray


def _own_action_max(game, values: CoalitionValueTable, coalition: int, agent: int) -> np.ndarray:
    """max over the other members' actions of q_star, as an array (S, A_agent)."""
    ms = members(coalition)
    shaped = values.q_star.reshape(game.n_states, *(game.actions_per_agent[k] for k in ms))
    others = tuple(1 + k for k, m in enumerate(ms) if m != agent)
    return shaped.max(axis=others) if others else shaped


def marginal_contribution(game: MarkovConvexGame, agent: int, predecessor: int,
                          tol: float = VI_TOL, values=None) -> MarginalContribution:
    """What ``agent`` adds to ``predecessor`` when it joins.

    ``phi_q[s, a]`` fixes the joining agent's first action to ``a`` while the
    predecessors pick their best joint action; its maximum over ``a`` is
    ``phi_v``.
    """
    if predecessor >> agent & 1:
        raise ValueError(f"agent {agent} is already in the predecessor coalition")
    if values is None:
        values = {}
    joined = predecessor | 1 << agent
    for c in (predecessor, joined):
        if c not in values:
            values[c] = coalition_value_iteration(game, c, tol)
    before = values[predecessor].v_star
    phi_q = _own_action_max(game, values[joined], joined, agent) - before[:, None]
    phi_v = values[joined].v_star - before
    return MarginalContribution(agent, predecessor, phi_v, phi_q)


@dataclass(frozen=True)
class ShapleyTable:
    """Per-agent Markov Shapley values.

    ``q_phi[i]`` has shape (S, A_i) and averages action-conditioned marginal
    contributions with a fixed own action. ``v_phi`` has shape (N, S) and is
    the optimal Shapley payoff: the agent's best action is chosen separately
    for every predecessor coalition before averaging, so ``v_phi[i, s]`` is
    the weighted average of ``max_a phi_q`` over predecessors.
    """

    q_phi: tuple[np.ndarray, ...]
    v_phi: np.ndarray
    mode: str = "exact"
    M: int | None = None
    seed: int | None = None

    @property
    def n_agents(self) -> int:
        return len(self.q_phi)

    def optimal_payoff(self) -> np.ndarray:
        return self.v_phi

    def greedy_q(self) -> np.ndarray:
        """max over own action of q_phi, shape (N, S); at most ``v_phi``."""
        return np.stack([q.max(axis=1) for q in self.q_phi])

    def perturbed(self, agent: int, state: int, delta: float) -> ShapleyTable:
        v = self.v_phi.copy()
        v[agent, state] += delta
        q = [t.copy() for t in self.q_phi]
        q[agent][state] += delta
        return ShapleyTable(tuple(q), v, self.mode, self.M, self.seed)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "M": self.M,
            "seed": self.seed,
            "q_phi": [q.tolist() for q in self.q_phi],
            "v_phi": self.v_phi.tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> ShapleyTable:
        return cls(tuple(np.array(q, dtype=float) for q in doc["q_phi"]), np.array(doc["v_phi"], dtype=float),
                   doc["mode"], doc.get("M"), doc.get("seed"))


def markov_shapley_table_exact(game: MarkovConvexGame, tol: float = VI_TOL, values=None) -> ShapleyTable:
    """Weighted subset sum over every predecessor coalition of every agent."""
    n = game.n_agents
    if n > MAX_EXACT_AGENTS:
        raise ValueError(f"exact tables need at most {MAX_EXACT_AGENTS} agents")
    if values is None:
        values = all_coalition_values(game, tol)
    q_phi = []
    v_phi = np.zeros((n, game.n_states))
    for i in range(n):
        q = np.zeros((game.n_states, game.actions_per_agent[i]))
        for c in subsets_without(n, i):
            mc = marginal_contribution(game, i, c, values=values)
            w = coalition_weight(n, size(c))
            q += w * mc.phi_q
            v_phi[i] += w * mc.phi_q.max(axis=1)
        q_phi.append(q)
    return ShapleyTable(tuple(q_phi), v_phi, "exact")


def predecessors(permutation) -> dict[int, int]:
    """Map each agent to the bitmask of agents ahead of it in ``permutation``."""
    out = {}
    ahead = 0
    for agent in permutation:
        out[int(agent)] = ahead
        ahead |= 1 << int(agent)
    return out


def shapley_table_from_permutations(game: MarkovConvexGame, permutations, values=None,
                                    mode="sampled", M=None, seed=None) -> ShapleyTable:
    """Average marginal contributions over the predecessor sets of given orderings."""
    n = game.n_agents
    if values is None:
        values = all_coalition_values(game)
    cache = {}
    q_phi = [np.zeros((game.n_states, a)) for a in game.actions_per_agent]
    v_phi = np.zeros((n, game.n_states))
    count = 0
    for perm in permutations:
        count += 1
        for i, c in predecessors(perm).items():
            if (i, c) not in cache:
                cache[i, c] = marginal_contribution(game, i, c, values=values).phi_q
            phi_q = cache[i, c]
            q_phi[i] += phi_q
            v_phi[i] += phi_q.max(axis=1)
    if count == 0:
        raise ValueError("need at least one permutation")
    return ShapleyTable(tuple(q / count for q in q_phi), v_phi / count, mode, M, seed)


def markov_shapley_table_sampled(game: MarkovConvexGame, M: int, seed: int, tol: float = VI_TOL,
                                 values=None, exhaustive: bool = False) -> ShapleyTable:
    """Monte Carlo estimate from ``M`` uniformly drawn orderings of the agents.

    With ``exhaustive=True`` every ordering is used once instead (``M`` is
    then ignored and recorded as n!).
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    n = game.n_agents
    if values is None:
        values = all_coalition_values(game, tol)
    if exhaustive:
        if n > MAX_PERMUTATION_AGENTS:
            raise ValueError(f"permutation enumeration needs at most {MAX_PERMUTATION_AGENTS} agents")
        perms = itertools.permutations(range(n))
        return shapley_table_from_permutations(game, perms, values, "sampled", math.factorial(n), seed)
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(n) for _ in range(M)]
    return shapley_table_from_permutations(game, perms, values, "sampled", M, seed)


@dataclass
class CheckResult:
    passed: bool
    detail: dict

    def __bool__(self):
        return self.passed


def check_efficiency(game: MarkovConvexGame, table: ShapleyTable, tol: float = 1e-6, oracle=None) -> CheckResult:
    """Compare the summed optimal Shapley payoffs with the optimal global value, per state."""
    if oracle is None:
        oracle = joint_value_iteration(game)
    residual = np.abs(oracle.v_star - table.optimal_payoff().sum(axis=0))
    return CheckResult(bool(np.all(residual <= tol)), {"residual": residual.tolist(),
                                                       "max_residual": float(residual.max())})


def check_dummy(game: MarkovConvexGame, table: ShapleyTable, dummy_agent: int, tol: float = 1e-9) -> CheckResult:
    v = np.abs(table.v_phi[dummy_agent])
    return CheckResult(bool(np.all(v <= tol)), {"agent": dummy_agent, "max_abs_value": float(v.max())})


def check_fairness(game: MarkovConvexGame, table: ShapleyTable, tol: float = 1e-9, pairs=None) -> CheckResult:
    """Interchangeable agents must receive the same Shapley value in every state."""
    if pairs is None:
        pairs = symmetric_pairs(game)
    if not pairs:
        warnings.warn("no interchangeable agent pairs; fairness holds vacuously", stacklevel=2)
        return CheckResult(True, {"pairs": [], "vacuous": True})
    gaps = {f"{i},{j}": float(np.max(np.abs(table.v_phi[i] - table.v_phi[j]))) for i, j in pairs}
    return CheckResult(all(g <= tol for g in gaps.values()), {"pairs": [list(p) for p in pairs], "gaps": gaps})


def check_markov_core(game: MarkovConvexGame, table: ShapleyTable, tol: float = 1e-6, values=None,
                      coalitions=None) -> CheckResult:
    """No coalition can secure more on its own than its members' summed payoffs."""
    if values is None:
        values = all_coalition_values(game)
    payoff = table.optimal_payoff()
    if coalitions is None:
        coalitions = range(1, 1 << game.n_agents)
    for c in coalitions:
        ms = list(members(c))
        lhs = payoff[ms].sum(axis=0)
        rhs = values[c].v_star
        bad = np.flatnonzero(lhs < rhs - tol)
        if len(bad):
            s = int(bad[0])
            return CheckResult(False, {"coalition": c, "members": ms, "state": s,
                                       "payoff_sum": float(lhs[s]), "coalition_value": float(rhs[s])})
    return CheckResult(True, {})


def shapley_report(game: MarkovConvexGame, table: ShapleyTable, tol: float = 1e-6, values=None) -> dict:
    """Run every property check on an exact table and collect the results."""
    if values is None:
        values = all_coalition_values(game)
    oracle = values[game.grand_coalition]
    report = {
        "efficiency": check_efficiency(game, table, tol, oracle),
        "convexity": check_convexity(game, values=values),
        "core": check_markov_core(game, table, tol, values),
    }
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report["fairness"] = check_fairness(game, table, max(tol, 1e-9))
    for d in dummy_agents(game):
        report[f"dummy_{d}"] = check_dummy(game, table, d, max(tol, 1e-9))
    return report
