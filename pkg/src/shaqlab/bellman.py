"""The Shapley-Bellman operator on factored Q-tables and its fixed point.

Each agent's table is indexed by (state, own action) while the operator's
right-hand side is a function of the joint action. The sweep evaluates agent
``i``'s entry at ``(a_i, best joint response of the others to a_i)``, that is
the maximum of the backed-up global value over the other agents' actions.
With this convention the operator is a contraction for every fixed weight
spec satisfying the bound below, and with ``w = 1/N`` at greedy actions its
fixed point splits the optimal global value equally among the agents.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .game import ConvergenceError, MarkovConvexGame
from .shapley import CheckResult


@dataclass(frozen=True)
class FactoredQ:
    tables: tuple[np.ndarray, ...]

    @classmethod
    def full(cls, game: MarkovConvexGame, value: float = 0.0) -> FactoredQ:
        return cls(tuple(np.full((game.n_states, a), float(value)) for a in game.actions_per_agent))

    @classmethod
    def random(cls, game: MarkovConvexGame, rng, low=-10.0, high=10.0) -> FactoredQ:
        return cls(tuple(rng.uniform(low, high, size=(game.n_states, a)) for a in game.actions_per_agent))

    @property
    def n_agents(self) -> int:
        return len(self.tables)

    def greedy(self) -> np.ndarray:
        """Greedy own action per (agent, state), lowest index on ties."""
        return np.stack([q.argmax(axis=1) for q in self.tables])

    def greedy_values(self) -> np.ndarray:
        return np.stack([q.max(axis=1) for q in self.tables])

    def max_sum(self) -> np.ndarray:
        """Sum over agents of each agent's best entry, per state."""
        return self.greedy_values().sum(axis=0)

    def __sub__(self, other: FactoredQ) -> FactoredQ:
        return FactoredQ(tuple(a - b for a, b in zip(self.tables, other.tables)))

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(q))) for q in self.tables)

    def to_json(self) -> list:
        return [q.tolist() for q in self.tables]


def factored_norm(q: FactoredQ) -> float:
    """max over (state, joint action) of the summed absolute agent entries."""
    return float(np.max(sum(np.abs(t).max(axis=1) for t in q.tables)))


def state_residuals(q: FactoredQ) -> np.ndarray:
    """Largest absolute entry per state over all agents and actions."""
    return np.max(np.stack([np.abs(t).max(axis=1) for t in q.tables]), axis=0)


@dataclass(frozen=True)
class WeightSpec:
    """Per-agent scale ``w[i]`` of shape (S, A_i) and offset ``b`` of shape (N, S)."""

    w: tuple[np.ndarray, ...]
    b: np.ndarray

    @classmethod
    def uniform(cls, game: MarkovConvexGame) -> WeightSpec:
        n = game.n_agents
        return cls(tuple(np.full((game.n_states, a), 1.0 / n) for a in game.actions_per_agent),
                   np.zeros((n, game.n_states)))

    @classmethod
    def from_alpha(cls, alpha, greedy_of: FactoredQ) -> WeightSpec:
        """Weights implied by per-entry scalings ``alpha >= 1``: 1/N at greedy actions, 1/(N alpha) elsewhere."""
        n = len(alpha)
        greedy = greedy_of.greedy()
        w = []
        for i, a in enumerate(alpha):
            wi = 1.0 / (n * np.asarray(a, dtype=float))
            wi[np.arange(wi.shape[0]), greedy[i]] = 1.0 / n
            w.append(wi)
        return cls(tuple(w), np.zeros((n, w[0].shape[0])))

    def max_weight_sum(self) -> float:
        return float(np.max(sum(wi.max(axis=1) for wi in self.w)))

    def contraction_factor(self, gamma: float) -> float:
        return gamma * self.max_weight_sum()


def _check_shapes(q: FactoredQ, game: MarkovConvexGame, spec: WeightSpec | None = None):
    expected = [(game.n_states, a) for a in game.actions_per_agent]
    if [t.shape for t in q.tables] != expected:
        raise ValueError(f"Q tables have shapes {[t.shape for t in q.tables]}, expected {expected}")
    if spec is not None:
        if [t.shape for t in spec.w] != expected or spec.b.shape != (game.n_agents, game.n_states):
            raise ValueError("weight spec shape does not match the game")


def check_weight_spec(spec: WeightSpec, game: MarkovConvexGame, greedy_of: FactoredQ,
                      tol: float = 1e-12) -> CheckResult:
    """Validate a weight spec: signs, offset cancellation, greedy weights and the contraction bound."""
    _check_shapes(greedy_of, game, spec)
    n = game.n_agents
    min_w = min(float(w.min()) for w in spec.w)
    min_b = float(spec.b.min())
    # sum_i b_i / w_i over joint actions is extremal at the per-agent extremes
    ratios = [spec.b[i][:, None] / spec.w[i] for i in range(n)]
    cancel = max(float(np.max(np.abs(sum(r.max(axis=1) for r in ratios)))),
                 float(np.max(np.abs(sum(r.min(axis=1) for r in ratios)))))
    greedy = greedy_of.greedy()
    s_idx = np.arange(game.n_states)
    greedy_gap = max(float(np.max(np.abs(spec.w[i][s_idx, greedy[i]] - 1.0 / n))) for i in range(n))
    weight_sum = spec.max_weight_sum()
    checks = {
        "positive_w": min_w > 0,
        "nonnegative_b": min_b >= 0,
        "offsets_cancel": cancel <= tol,
        "greedy_weight": greedy_gap <= tol,
        "contraction": weight_sum < 1.0 / game.gamma,
    }
    detail = {
        **checks,
        "min_w": min_w,
        "min_b": min_b,
        "offset_sum": cancel,
        "greedy_weight_gap": greedy_gap,
        "max_weight_sum": weight_sum,
        "contraction_factor": spec.contraction_factor(game.gamma),
    }
    return CheckResult(all(checks.values()), detail)


def backed_up_values(q: FactoredQ, game: MarkovConvexGame) -> np.ndarray:
    """Global one-step backup ``R + gamma * E[sum_i max Q_i(s')]`` shaped (S, A_0, ..., A_{n-1})."""
    target = game.global_reward + game.gamma * (game.transition @ q.max_sum())
    return target.reshape(game.n_states, *game.actions_per_agent)


def apply_operator(q: FactoredQ, spec: WeightSpec, game: MarkovConvexGame) -> FactoredQ:
    _check_shapes(q, game, spec)
    T = backed_up_values(q, game)
    n = game.n_agents
    out = []
    for i in range(n):
        others = tuple(1 + k for k in range(n) if k != i)
        best = T.max(axis=others) if others else T
        out.append(spec.w[i] * best - spec.b[i][:, None])
    return FactoredQ(tuple(out))


def residual_optimality(q: FactoredQ, spec: WeightSpec, game: MarkovConvexGame) -> FactoredQ:
    """``q - apply_operator(q)``; all zeros exactly at the fixed point."""
    return q - apply_operator(q, spec, game)


@dataclass
class FixedPointResult:
    q: FactoredQ
    trace: list[tuple[int, float, np.ndarray]] = field(default_factory=list)
    contraction_factor: float = 0.0

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r for _, r, _ in self.trace])

    def write_trace(self, path) -> None:
        n_states = len(self.trace[0][2]) if self.trace else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "residual_l1", *(f"state_{s}_max_residual" for s in range(n_states))])
            for it, res, per_state in self.trace:
                writer.writerow([it, repr(res), *(repr(float(x)) for x in per_state)])


def fixed_point_iterate(spec: WeightSpec, game: MarkovConvexGame, tol: float = 1e-8,
                        max_iter: int = 100_000, q0: FactoredQ | None = None) -> FixedPointResult:
    """Iterate the operator until the returned table is within ``tol`` of the fixed point.

    Stops once the last step ``r`` satisfies ``r <= tol`` and the a-posteriori
    bound ``delta * r / (1 - delta) <= tol``, where ``delta`` is the
    contraction factor of ``spec``.
    """
    delta = spec.contraction_factor(game.gamma)
    if not delta < 1.0:
        raise ValueError(f"weight spec is not a contraction (factor {delta:.6g} >= 1)")
    q = FactoredQ.full(game) if q0 is None else q0
    _check_shapes(q, game, spec)
    result = FixedPointResult(q, [], delta)
    for it in range(1, max_iter + 1):
        q_new = apply_operator(q, spec, game)
        diff = q_new - q
        res = factored_norm(diff)
        result.trace.append((it, res, state_residuals(diff)))
        q = q_new
        if res <= tol and delta * res <= tol * (1.0 - delta):
            result.q = q
            return result
    raise ConvergenceError(f"fixed-point iteration did not converge in {max_iter} steps", res)


def stochastic_sbo_update(q: FactoredQ, spec: WeightSpec, gamma: float, sample, step_size) -> FactoredQ:
    """One sampled update of every agent's entry at the visited (state, own action).

    ``sample`` is ``(state, joint_action, reward, next_state)``. ``step_size``
    is a scalar or one step size per agent.
    """
    s, joint, reward, s_next = sample
    steps = np.broadcast_to(np.asarray(step_size, dtype=float), (q.n_agents,))
    if np.any(steps < 0) or np.any(steps > 1):
        raise ValueError("step sizes must lie in [0, 1]")
    target_total = reward + gamma * sum(float(t[s_next].max()) for t in q.tables)
    out = []
    for i, table in enumerate(q.tables):
        new = table.copy()
        a = joint[i]
        target = spec.w[i][s, a] * target_total - spec.b[i, s]
        new[s, a] += steps[i] * (target - table[s, a])
        out.append(new)
    return FactoredQ(tuple(out))


def greedy_joint_policy(q: FactoredQ) -> np.ndarray:
    """Decentralized greedy joint action per state, shape (S, N)."""
    return q.greedy().T
