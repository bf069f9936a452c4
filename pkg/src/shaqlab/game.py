"""Tabular Markov convex games and coalition value iteration.

Coalitions are plain integer bitmasks (bit ``i`` set means agent ``i`` is a
member). Joint actions of a coalition are ranked mixed-radix over its
members in increasing index order, the lowest-indexed member being the most
significant digit. The same convention ranks joint actions of the grand
coalition, so ``np.ravel_multi_index(actions, actions_per_agent)`` gives the
rank used everywhere in this package.

Agents outside a coalition are pinned to the null action 0 when a coalition
value is evaluated.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

MAX_AGENTS = 16
VI_TOL = 1e-8
VI_MAX_ITER = 100_000

Coalition = int


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


def members(coalition: Coalition) -> tuple[int, ...]:
    out = []
    i = 0
    while coalition:
        if coalition & 1:
            out.append(i)
        coalition >>= 1
        i += 1
    return tuple(out)


def mask_of(agents) -> Coalition:
    mask = 0
    for i in agents:
        mask |= 1 << int(i)
    return mask


def grand(n_agents: int) -> Coalition:
    return (1 << n_agents) - 1


def size(coalition: Coalition) -> int:
    return bin(coalition).count("1")


def all_coalitions(n_agents: int) -> range:
    return range(1 << n_agents)


def subsets_without(n_agents: int, agent: int):
    """All coalitions of the other agents, in increasing bitmask order."""
    bit = 1 << agent
    return [c for c in all_coalitions(n_agents) if not c & bit]


@dataclass(frozen=True, eq=False)
class MarkovConvexGame:
    """A finite Markov game with an explicit coalition reward table.

    Attributes:
        actions_per_agent: number of actions of each agent.
        transition: array ``(n_states, n_joint_actions, n_states)``.
        coalition_reward: map from coalition bitmask to an array
            ``(n_states, n_coalition_actions)``. Missing coalitions have zero
            reward; the empty coalition must be absent or all-zero.
        gamma: discount factor in (0, 1).
    """

    actions_per_agent: tuple[int, ...]
    transition: np.ndarray
    coalition_reward: dict[int, np.ndarray]
    gamma: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if not 1 <= len(self.actions_per_agent) <= MAX_AGENTS:
            raise ValueError(f"need 1..{MAX_AGENTS} agents, got {len(self.actions_per_agent)}")
        object.__setattr__(self, "actions_per_agent", tuple(int(a) for a in self.actions_per_agent))
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[1] != self.n_joint_actions or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition has shape {P.shape}, expected (S, {self.n_joint_actions}, S)")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        rewards = {}
        for c, table in self.coalition_reward.items():
            c = int(c)
            if not 0 <= c <= grand(self.n_agents):
                raise ValueError(f"coalition {c} is not a subset of the grand coalition")
            table = np.asarray(table, dtype=float)
            expected = (self.n_states, self.n_coalition_actions(c))
            if table.shape != expected:
                raise ValueError(f"reward for coalition {c} has shape {table.shape}, expected {expected}")
            table.setflags(write=False)
            rewards[c] = table
        object.__setattr__(self, "coalition_reward", rewards)

    @property
    def n_agents(self) -> int:
        return len(self.actions_per_agent)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_joint_actions(self) -> int:
        return math.prod(self.actions_per_agent)

    @property
    def grand_coalition(self) -> Coalition:
        return grand(self.n_agents)

    def n_coalition_actions(self, coalition: Coalition) -> int:
        return math.prod(self.actions_per_agent[i] for i in members(coalition))

    def reward(self, coalition: Coalition) -> np.ndarray:
        """Reward table of ``coalition``, zeros when it was never specified."""
        table = self.coalition_reward.get(coalition)
        if table is None:
            return np.zeros((self.n_states, self.n_coalition_actions(coalition)))
        return table

    @property
    def global_reward(self) -> np.ndarray:
        return self.reward(self.grand_coalition)

    def joint_rank(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(actions), self.actions_per_agent))

    def joint_actions(self, rank: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unravel_index(rank, self.actions_per_agent))

    @cached_property
    def transition_tensor(self) -> np.ndarray:
        """Transitions reshaped to ``(S, A_0, ..., A_{n-1}, S)``."""
        return self.transition.reshape((self.n_states, *self.actions_per_agent, self.n_states))

    def coalition_transition(self, coalition: Coalition) -> np.ndarray:
        """Transitions ``(S, n_coalition_actions, S)`` with non-members at action 0."""
        index = [slice(None)]
        for i in range(self.n_agents):
            index.append(slice(None) if coalition >> i & 1 else 0)
        index.append(slice(None))
        P = self.transition_tensor[tuple(index)]
        return P.reshape(self.n_states, self.n_coalition_actions(coalition), self.n_states)

    def with_gamma(self, gamma: float) -> MarkovConvexGame:
        return MarkovConvexGame(self.actions_per_agent, self.transition, self.coalition_reward, gamma, self.name)

    def to_json(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "n_states": self.n_states,
            "actions_per_agent": list(self.actions_per_agent),
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "coalition_reward": {str(c): t.tolist() for c, t in sorted(self.coalition_reward.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> MarkovConvexGame:
        game = cls(
            actions_per_agent=tuple(doc["actions_per_agent"]),
            transition=np.array(doc["transition"], dtype=float),
            coalition_reward={int(c): np.array(t, dtype=float) for c, t in doc["coalition_reward"].items()},
            gamma=float(doc["gamma"]),
        )
        if game.n_agents != doc["n_agents"] or game.n_states != doc["n_states"]:
            raise ValueError("n_agents/n_states disagree with the array shapes")
        return game

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @classmethod
    def load(cls, path) -> MarkovConvexGame:
        return cls.from_json(json.loads(Path(path).read_text()))


def validate_game(game: MarkovConvexGame) -> list[str]:
    """Return human-readable violations of the game's definitional constraints."""
    problems = []
    sums = game.transition.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > 1e-12)
    for s, a in bad:
        problems.append(f"transition row (s={s}, a={a}) sums to {sums[s, a]:.15g}")
    if np.any(game.transition < 0):
        problems.append("transition has negative probabilities")
    for c, table in sorted(game.coalition_reward.items()):
        if c == 0:
            if np.any(table != 0):
                problems.append("empty coalition has nonzero reward")
        elif np.any(table < 0):
            problems.append(f"coalition {c} has negative reward (min {table.min():.6g})")
    if not 0.0 < game.gamma < 1.0:
        problems.append(f"gamma={game.gamma} outside (0, 1)")
    return problems


@dataclass(frozen=True)
class CoalitionValueTable:
    coalition: Coalition
    v_star: np.ndarray
    q_star: np.ndarray
    greedy_policy: np.ndarray
    residual: float = 0.0
    iterations: int = 0


def _solve(R, P, gamma, tol, max_iter, q0=None):
    Q = np.zeros_like(R) if q0 is None else q0.copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        Q_new = R + gamma * (P @ Q.max(axis=1))
        residual = float(np.max(np.abs(Q_new - Q))) if Q.size else 0.0
        Q = Q_new
        if residual <= tol:
            return Q, residual, it
    raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps", residual)


def coalition_value_iteration(
    game: MarkovConvexGame,
    coalition: Coalition,
    tol: float = VI_TOL,
    max_iter: int = VI_MAX_ITER,
) -> CoalitionValueTable:
    """Optimal values of ``coalition`` with non-members pinned to action 0."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if coalition & ~game.grand_coalition:
        raise ValueError(f"coalition {coalition} is not a subset of the grand coalition")
    S = game.n_states
    if coalition == 0:
        return CoalitionValueTable(0, np.zeros(S), np.zeros((S, 1)), np.zeros(S, dtype=int))
    R = game.reward(coalition)
    P = game.coalition_transition(coalition)
    Q, residual, it = _solve(R, P, game.gamma, tol, max_iter)
    return CoalitionValueTable(coalition, Q.max(axis=1), Q, Q.argmax(axis=1), residual, it)


def joint_value_iteration(game: MarkovConvexGame, tol: float = VI_TOL, max_iter: int = VI_MAX_ITER):
    """Optimal global Q-values, the oracle for everything factored."""
    return coalition_value_iteration(game, game.grand_coalition, tol, max_iter)


def all_coalition_values(game: MarkovConvexGame, tol: float = VI_TOL) -> dict[int, CoalitionValueTable]:
    return {c: coalition_value_iteration(game, c, tol) for c in all_coalitions(game.n_agents)}


def value_matrix(values: dict[int, CoalitionValueTable]) -> np.ndarray:
    """Stack ``v_star`` into an array indexed ``[coalition, state]``."""
    return np.stack([values[c].v_star for c in range(len(values))])


@dataclass
class ConvexityReport:
    passed: bool
    violation: dict | None = None

    def __bool__(self):
        return self.passed


def check_convexity(game: MarkovConvexGame, tol: float = 1e-8, values=None) -> ConvexityReport:
    """Check supermodularity of optimal coalition values at every state.

    For every pair of coalitions (m, k) and state s this verifies
    ``V(m|k) + V(m&k) >= V(m) + V(k) - tol``. The first violation in
    (m, k, s) lexicographic order is returned with all four values.
    """
    if values is None:
        values = all_coalition_values(game)
    V = value_matrix(values)
    n_c = V.shape[0]
    ks = np.arange(n_c)
    for m in range(n_c):
        lhs = V[m | ks] + V[m & ks]
        rhs = V[m] + V[ks]
        bad = np.argwhere(lhs < rhs - tol)
        if len(bad):
            k, s = (int(x) for x in bad[0])
            return ConvexityReport(False, {
                "coalition_m": m, "coalition_k": k, "state": s,
                "v_union": float(V[m | k, s]), "v_intersection": float(V[m & k, s]),
                "v_m": float(V[m, s]), "v_k": float(V[k, s]),
            })
    return ConvexityReport(True)


def check_superadditivity(game: MarkovConvexGame, tol: float = 1e-8, values=None) -> ConvexityReport:
    """Disjoint-pair form of the convexity check, where V(m&k) = 0."""
    if values is None:
        values = all_coalition_values(game)
    V = value_matrix(values)
    n_c = V.shape[0]
    for m in range(n_c):
        for k in range(n_c):
            if m & k:
                continue
            s_bad = np.flatnonzero(V[m | k] < V[m] + V[k] - tol)
            if len(s_bad):
                s = int(s_bad[0])
                return ConvexityReport(False, {
                    "coalition_m": m, "coalition_k": k, "state": s,
                    "v_union": float(V[m | k, s]), "v_intersection": 0.0,
                    "v_m": float(V[m, s]), "v_k": float(V[k, s]),
                })
    return ConvexityReport(True)


def _draw_game(rng, actions, n_states, gamma):
    n = len(actions)
    n_joint = math.prod(actions)
    # half of each row is a state-only drift so every coalition sees the same dynamics backbone
    base = rng.dirichlet(np.ones(n_states), size=n_states)
    mix = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    P = 0.5 * base[:, None, :] + 0.5 * mix
    P /= P.sum(axis=2, keepdims=True)

    # supermodular rewards: each nonempty subset T carries a nonnegative bonus that
    # every coalition containing T collects
    bonus = {}
    for t in range(1, 1 << n):
        ms = members(t)
        weight = rng.uniform(0.0, 1.0, size=n_states) * len(ms)
        shape = (n_states, *(actions[i] for i in ms))
        bonus[t] = weight.reshape(-1, *([1] * len(ms))) * rng.uniform(0.5, 1.0, size=shape)
    rewards = {}
    for c in range(1, 1 << n):
        ms = members(c)
        total = np.zeros((n_states, *(actions[i] for i in ms)))
        for t, b in bonus.items():
            if t & ~c:
                continue
            # broadcast the subset's table over the coalition's remaining axes
            expand = [slice(None)] + [slice(None) if (t >> i) & 1 else None for i in ms]
            total = total + b[tuple(expand)]
        rewards[c] = total.reshape(n_states, -1)
    return MarkovConvexGame(tuple(actions), P, rewards, gamma)


def generate_convex_game(
    n_agents: int,
    n_states: int,
    n_actions,
    seed: int,
    gamma: float = 0.9,
    max_attempts: int = 1000,
) -> MarkovConvexGame:
    """Draw a random game whose optimal coalition values are supermodular.

    Rewards are sums of nonnegative subset bonuses, which makes every
    per-action-profile reward supermodular; transitions depend on the joint
    action, so the candidate is verified with :func:`check_convexity` and
    redrawn from the same stream until it passes.
    """
    if isinstance(n_actions, (int, np.integer)):
        actions = (int(n_actions),) * n_agents
    else:
        actions = tuple(int(a) for a in n_actions)
    if len(actions) != n_agents:
        raise ValueError("n_actions must be an int or one count per agent")
    if n_agents > 12:
        raise ValueError("generator supports at most 12 agents")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        game = _draw_game(rng, actions, n_states, gamma)
        if check_convexity(game, tol=1e-8):
            return MarkovConvexGame(game.actions_per_agent, game.transition, game.coalition_reward,
                                    gamma, name=f"convex-{n_agents}-{n_states}-{seed}")
    raise RuntimeError(f"no convex game found in {max_attempts} draws")


def single_state_game(grand_payoff, singleton_rewards=None, gamma=0.9, coalition_rewards=None):
    """Build a one-state game from a global payoff tensor.

    ``grand_payoff`` has one axis per agent. ``coalition_rewards`` maps
    bitmasks of proper coalitions to arrays over their members' actions;
    ``singleton_rewards`` is shorthand for the one-member coalitions.
    """
    payoff = np.asarray(grand_payoff, dtype=float)
    actions = payoff.shape
    n = len(actions)
    rewards = {grand(n): payoff.reshape(1, -1)}
    for i, r in enumerate(singleton_rewards or []):
        rewards[1 << i] = np.asarray(r, dtype=float).reshape(1, -1)
    for c, r in (coalition_rewards or {}).items():
        rewards[int(c)] = np.asarray(r, dtype=float).reshape(1, -1)
    P = np.ones((1, math.prod(actions), 1))
    return MarkovConvexGame(actions, P, rewards, gamma)


def non_convex_fixture(gamma: float = 0.9) -> MarkovConvexGame:
    """Two agents whose singletons earn 5 each but together only 6."""
    game = single_state_game([[6.0]], singleton_rewards=[[5.0], [5.0]], gamma=gamma)
    return MarkovConvexGame(game.actions_per_agent, game.transition, game.coalition_reward,
                            gamma, name="non-convex")


def glove_game(gamma: float = 0.5) -> MarkovConvexGame:
    """Symmetric two-agent game where only the pair earns anything (12 per step at best)."""
    game = single_state_game([[0.0, 6.0], [6.0, 12.0]], singleton_rewards=[[0, 0], [0, 0]], gamma=gamma)
    return MarkovConvexGame(game.actions_per_agent, game.transition, game.coalition_reward,
                            gamma, name="glove")


def append_dummy(game: MarkovConvexGame, n_actions: int = 2) -> MarkovConvexGame:
    """Add an agent whose actions change neither transitions nor any reward."""
    n = game.n_agents
    d = 1 << n
    P = np.repeat(game.transition_tensor[..., None, :], n_actions, axis=-2)
    P = P.reshape(game.n_states, game.n_joint_actions * n_actions, game.n_states)
    rewards = {}
    for c in range(1, 1 << n):
        table = game.reward(c)
        rewards[c] = table
        rewards[c | d] = np.repeat(table, n_actions, axis=1)
    return MarkovConvexGame((*game.actions_per_agent, n_actions), P, rewards, game.gamma,
                            name=f"{game.name}+dummy")


def swap_agents(game: MarkovConvexGame, i: int, j: int) -> MarkovConvexGame:
    """Relabel agents ``i`` and ``j``. Requires equal action counts."""
    if game.actions_per_agent[i] != game.actions_per_agent[j]:
        raise ValueError("swapped agents must have the same number of actions")
    perm = list(range(game.n_agents))
    perm[i], perm[j] = j, i
    T = game.transition_tensor
    T = np.transpose(T, [0, *(1 + p for p in perm), game.n_agents + 1])
    P = T.reshape(game.transition.shape)
    rewards = {}
    for c, table in game.coalition_reward.items():
        ms = members(c)
        new_c = mask_of(perm[k] for k in ms)
        new_ms = members(new_c)
        # axis for new member m comes from old member perm^-1(m) = perm[m]
        src = [ms.index(perm[m]) for m in new_ms]
        shaped = table.reshape(game.n_states, *(game.actions_per_agent[k] for k in ms))
        rewards[new_c] = np.transpose(shaped, [0, *(1 + s for s in src)]).reshape(game.n_states, -1)
    return MarkovConvexGame(game.actions_per_agent, P, rewards, game.gamma, name=game.name)


def symmetrize(game: MarkovConvexGame, i: int = 0, j: int = 1) -> MarkovConvexGame:
    """Average a game with its ``i``/``j`` relabelling so the pair becomes interchangeable."""
    other = swap_agents(game, i, j)
    P = 0.5 * (game.transition + other.transition)
    rewards = {c: 0.5 * (game.reward(c) + other.reward(c))
               for c in set(game.coalition_reward) | set(other.coalition_reward)}
    return MarkovConvexGame(game.actions_per_agent, P, rewards, game.gamma, name=f"{game.name}~sym{i}{j}")


def are_interchangeable(game: MarkovConvexGame, i: int, j: int, tol: float = 1e-12) -> bool:
    if game.actions_per_agent[i] != game.actions_per_agent[j]:
        return False
    other = swap_agents(game, i, j)
    if not np.allclose(game.transition, other.transition, atol=tol, rtol=0):
        return False
    for c in range(1, 1 << game.n_agents):
        if not np.allclose(game.reward(c), other.reward(c), atol=tol, rtol=0):
            return False
    return True


def symmetric_pairs(game: MarkovConvexGame, tol: float = 1e-12) -> list[tuple[int, int]]:
    n = game.n_agents
    return [(i, j) for i in range(n) for j in range(i + 1, n) if are_interchangeable(game, i, j, tol)]


def is_dummy(game: MarkovConvexGame, agent: int, tol: float = 1e-12) -> bool:
    """True when ``agent`` affects neither transitions nor any coalition reward."""
    T = game.transition_tensor
    ax = 1 + agent
    if not np.allclose(T, np.take(T, [0], axis=ax), atol=tol, rtol=0):
        return False
    bit = 1 << agent
    for c in range(1 << game.n_agents):
        if c & bit:
            continue
        with_i = game.reward(c | bit)
        ms = members(c | bit)
        shaped = with_i.reshape(game.n_states, *(game.actions_per_agent[k] for k in ms))
        base = game.reward(c).reshape(game.n_states, *(game.actions_per_agent[k] for k in members(c)))
        expanded = np.expand_dims(base, 1 + ms.index(agent))
        if not np.allclose(shaped, expanded, atol=tol, rtol=0):
            return False
    return True


def dummy_agents(game: MarkovConvexGame, tol: float = 1e-12) -> list[int]:
    return [i for i in range(game.n_agents) if is_dummy(game, i, tol)]
