"""Tabular Shapley Q-learning and its additive (VDN) special case.

Each agent keeps a Q table keyed by its discrete observation. The TD target
is the global reward plus the discounted sum of per-agent maxima under the
target tables; the prediction scales every agent's entry by a factor that
is 1 at the agent's greedy action and a learned ``alpha >= 1`` elsewhere.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .bellman import FactoredQ, WeightSpec


@dataclass
class LearnerConfig:
    algo: str = "shaq"
    gamma: float = 0.99
    lr_q: float = 5e-4
    lr_alpha: float = 1e-3
    optimizer: str = "rmsprop"
    rms_decay: float = 0.99
    rms_eps: float = 1e-5
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_update_interval: int = 200
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_steps: int = 10_000
    sample_size: int = 10
    updates_per_episode: int = 1
    alpha_buckets: int = 0
    alpha_init: tuple = (0.1, 0.1, 0.0)
    t_max: int = 50_000
    eval_interval: int = 5_000
    eval_episodes: int = 8

    def __post_init__(self):
        if self.algo not in ("shaq", "vdn"):
            raise ValueError(f"algo must be 'shaq' or 'vdn', got {self.algo!r}")
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.sample_size < 1:
            raise ValueError("sample_size (M) must be at least 1")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.alpha_init = tuple(float(x) for x in self.alpha_init)
        if len(self.alpha_init) != 3:
            raise ValueError("alpha_init needs three numbers (u1, u2, c)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_init"] = list(self.alpha_init)
        return d


@dataclass
class EpsilonSchedule:
    start: float = 1.0
    finish: float = 0.05
    anneal_steps: int = 10_000

    def value(self, t: int) -> float:
        if self.anneal_steps <= 0:
            return self.finish
        if t >= self.anneal_steps:
            return self.finish
        frac = max(t, 0) / self.anneal_steps
        return self.start + frac * (self.finish - self.start)


@dataclass(frozen=True)
class Transition:
    state: int
    obs: tuple[int, ...]
    actions: tuple[int, ...]
    reward: float
    next_state: int
    next_obs: tuple[int, ...]
    terminal: bool


@dataclass
class Episode:
    """One collected episode. Row arrays index the learner's tables at collection time."""

    transitions: list[Transition]
    obs_rows: np.ndarray
    next_obs_rows: np.ndarray
    alpha_rows: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.transitions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


class ReplayBuffer:
    """FIFO store of whole episodes, padded to the longest episode seen.

    Sampling is uniform over stored episodes, without replacement.
    """

    FIELDS = ("obs_rows", "next_obs_rows", "alpha_rows", "actions", "rewards", "terminals")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.size = 0
        self.inserted = 0
        self.arrays: dict[str, np.ndarray] = {}
        self.lengths = np.zeros(capacity, dtype=np.int64)

    def __len__(self):
        return self.size

    def _allocate(self, episode: Episode, max_len: int) -> None:
        old = self.arrays
        self.arrays = {}
        for name in self.FIELDS:
            x = getattr(episode, name)
            arr = np.zeros((self.capacity, max_len, *x.shape[1:]), dtype=x.dtype)
            if name in old:
                arr[:, :old[name].shape[1]] = old[name]
            self.arrays[name] = arr

    def add(self, episode: Episode) -> None:
        T = len(episode)
        if not self.arrays or T > self.arrays["rewards"].shape[1]:
            self._allocate(episode, max(T, self.arrays["rewards"].shape[1] if self.arrays else 0))
        slot = self.inserted % self.capacity
        for name in self.FIELDS:
            arr = self.arrays[name]
            arr[slot] = 0
            arr[slot, :T] = getattr(episode, name)
        self.lengths[slot] = T
        self.inserted += 1
        self.size = min(self.size + 1, self.capacity)

    def oldest_slot(self) -> int:
        return self.inserted % self.capacity if self.size == self.capacity else 0

    def sample_slots(self, batch_size: int, rng) -> np.ndarray:
        return rng.choice(self.size, size=min(batch_size, self.size), replace=False)

    def sample(self, batch_size: int, rng) -> dict[str, np.ndarray]:
        """Flattened transitions of the sampled episodes, padding removed."""
        slots = self.sample_slots(batch_size, rng)
        lengths = self.lengths[slots]
        mask = np.arange(self.arrays["rewards"].shape[1])[None, :] < lengths[:, None]
        return {name: self.arrays[name][slots][mask] for name in self.FIELDS}


class KeyedTable:
    """Rows of parameters addressed by integer keys, created on first sight."""

    def __init__(self, n_cols: int, init=None, capacity: int = 64):
        self.init = np.zeros(n_cols) if init is None else np.asarray(init, dtype=float)
        self.index: dict[int, int] = {}
        self.keys: list[int] = []
        self.values = np.tile(self.init, (capacity, 1))
        self.sq = np.zeros_like(self.values)

    def __len__(self):
        return len(self.keys)

    def row(self, key: int) -> int:
        key = int(key)
        r = self.index.get(key)
        if r is None:
            r = len(self.keys)
            if r == len(self.values):
                self.values = np.vstack([self.values, np.tile(self.init, (r, 1))])
                self.sq = np.vstack([self.sq, np.zeros_like(self.sq)])
            self.index[key] = r
            self.keys.append(key)
        return r

    @property
    def data(self) -> np.ndarray:
        return self.values[:len(self.keys)]

    def get(self, key: int) -> np.ndarray:
        r = self.row(key)  # may reallocate
        return self.values[r]

    def to_json(self) -> dict:
        return {str(k): self.values[r].tolist() for k, r in self.index.items()}

    def load_json(self, doc: dict) -> None:
        for k, row in doc.items():
            r = self.row(int(k))
            self.values[r] = row


def alpha_from_params(params, coalition_mean, own_q):
    """Evaluate ``F = |(|u1|) x + (|u2|) y + c|`` and return ``(mean_k F + 1, F, z)``.

    ``params`` has a trailing axis of size 3; ``coalition_mean`` and ``own_q``
    have the sample axis last and broadcast against ``params[..., None, :]``.
    """
    params = np.asarray(params, dtype=float)
    u1 = np.abs(params[..., 0])[..., None]
    u2 = np.abs(params[..., 1])[..., None]
    c = params[..., 2][..., None]
    z = u1 * coalition_mean + u2 * own_q + c
    F = np.abs(z)
    return F.mean(axis=-1) + 1.0, F, z


def coalition_means(q_chosen, perms):
    """Mean chosen-action Q of each agent's predecessors.

    Args:
        q_chosen: (B, N) per-agent Q of the taken actions.
        perms: (B, M, N) orderings of the agents.

    Returns:
        (B, N, M) means; the empty coalition gives 0.
    """
    perms = np.asarray(perms)
    B, M, N = perms.shape
    ordered = np.take_along_axis(np.broadcast_to(q_chosen[:, None, :], (B, M, N)), perms, axis=-1)
    ahead = np.cumsum(ordered, axis=-1) - ordered
    sizes = np.arange(N)
    ordered_mean = np.divide(ahead, sizes, out=np.zeros_like(ahead), where=sizes > 0)
    mean = np.empty_like(ordered_mean)
    np.put_along_axis(mean, perms, ordered_mean, axis=-1)
    return np.swapaxes(mean, 1, 2)


def sample_permutations(rng, batch: int, M: int, n_agents: int) -> np.ndarray:
    return rng.permuted(np.broadcast_to(np.arange(n_agents), (batch, M, n_agents)), axis=-1)


class AlphaModel:
    """Per-state-bucket parameters ``(u1, u2, c)`` of the nonnegative function F."""

    def __init__(self, M: int = 10, init=(0.1, 0.1, 0.0), n_buckets: int = 0):
        if M < 1:
            raise ValueError("M must be at least 1")
        self.M = M
        self.n_buckets = n_buckets
        self.table = KeyedTable(3, init)

    def bucket(self, state_key: int) -> int:
        return int(state_key) % self.n_buckets if self.n_buckets else int(state_key)

    def row(self, state_key: int) -> int:
        return self.table.row(self.bucket(state_key))

    def params(self, state_key: int) -> np.ndarray:
        r = self.row(state_key)
        return self.table.values[r]

    def alpha(self, state_key: int, q_chosen, perms) -> np.ndarray:
        """Alpha for every agent given (N,) chosen-action Q values and (K, N) orderings."""
        q_chosen = np.asarray(q_chosen, dtype=float)
        means = coalition_means(q_chosen[None], np.asarray(perms)[None])[0]
        a, _, _ = alpha_from_params(self.params(state_key), means, q_chosen[:, None])
        return a


@dataclass
class LossInputs:
    """A flattened batch: table rows, taken actions, alpha buckets and fixed TD targets."""

    obs_rows: np.ndarray
    actions: np.ndarray
    alpha_rows: np.ndarray
    targets: np.ndarray


def loss_and_grads(q_tables, alpha_params, batch: LossInputs, perms, frozen=None, vdn: bool = False):
    """Mean squared TD error and its gradients.

    The greedy-action test and the Q inputs of F are read from ``frozen``
    (defaults to ``q_tables``) and carry no gradient.

    Returns:
        ``(loss, q_grads, alpha_grad, delta)`` where ``q_grads`` matches the
        shapes of ``q_tables`` and ``delta`` is the (B, N) scaling used.
    """
    frozen = q_tables if frozen is None else frozen
    B, N = batch.actions.shape
    q_cur = np.stack([q_tables[i][batch.obs_rows[:, i], batch.actions[:, i]] for i in range(N)], axis=1)
    alpha_grad = np.zeros_like(alpha_params)
    if vdn:
        delta = np.ones((B, N))
    else:
        q_frozen = np.stack([frozen[i][batch.obs_rows[:, i], batch.actions[:, i]] for i in range(N)], axis=1)
        greedy = np.stack([frozen[i][batch.obs_rows[:, i]].argmax(axis=1) for i in range(N)], axis=1)
        off = greedy != batch.actions
        means = coalition_means(q_frozen, perms)
        params = alpha_params[batch.alpha_rows][:, None, :]
        alpha, _, z = alpha_from_params(params, means, q_frozen[:, :, None])
        delta = np.where(off, alpha, 1.0)
    err = batch.targets - (delta * q_cur).sum(axis=1)
    loss = float(np.mean(err ** 2))

    q_grads = [np.zeros_like(t) for t in q_tables]
    g_pred = -2.0 * err / B
    for i in range(N):
        np.add.at(q_grads[i], (batch.obs_rows[:, i], batch.actions[:, i]), g_pred * delta[:, i])
    if not vdn:
        g_alpha = (g_pred[:, None] * q_cur * off)[:, :, None] / perms.shape[1]
        g_z = g_alpha * np.sign(z)
        p = alpha_params[batch.alpha_rows]
        g_u1 = (g_z * means).sum(axis=(1, 2)) * np.sign(p[:, 0])
        g_u2 = (g_z * q_frozen[:, :, None]).sum(axis=(1, 2)) * np.sign(p[:, 1])
        g_c = g_z.sum(axis=(1, 2))
        np.add.at(alpha_grad, batch.alpha_rows, np.stack([g_u1, g_u2, g_c], axis=1))
    return loss, q_grads, alpha_grad, delta


class LearnerState:
    """Everything one training run owns: tables, alpha model, buffer, schedule and RNG."""

    def __init__(self, n_actions, config: LearnerConfig | None = None, seed: int = 0, rng=None):
        self.config = config or LearnerConfig()
        c = self.config
        self.n_actions = [int(a) for a in n_actions]
        self.n_agents = len(self.n_actions)
        self.q_tables = [KeyedTable(a) for a in self.n_actions]
        self.target_tables = [np.zeros((0, a)) for a in self.n_actions]
        self._target_best = [np.zeros(0) for _ in self.n_actions]
        self.alpha_model = AlphaModel(c.sample_size, c.alpha_init, c.alpha_buckets)
        self.buffer = ReplayBuffer(c.buffer_capacity)
        self.epsilon = EpsilonSchedule(c.epsilon_start, c.epsilon_finish, c.epsilon_anneal_steps)
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.step_count = 0
        self.last_target_update = 0
        self.n_updates = 0

    @property
    def vdn(self) -> bool:
        return self.config.algo == "vdn"

    def q_values(self, agent: int, obs_key: int) -> np.ndarray:
        return self.q_tables[agent].get(obs_key)

    def target_max(self, agent: int, rows: np.ndarray) -> np.ndarray:
        """Greedy target value per row; rows created after the last refresh read as zero."""
        best = self._target_best[agent]
        if len(rows) and rows.max() < len(best):
            return best[rows]
        out = np.zeros(len(rows))
        known = rows < len(best)
        out[known] = best[rows[known]]
        return out

    def refresh_targets(self) -> None:
        self.target_tables = [t.data.copy() for t in self.q_tables]
        self._target_best = [t.max(axis=1) if len(t) else np.zeros(0) for t in self.target_tables]
        self.last_target_update = self.step_count

    def greedy_actions(self, obs) -> tuple[int, ...]:
        return tuple(int(np.argmax(self.q_values(i, o))) for i, o in enumerate(obs))

    def to_json(self, config_hash: str = "") -> dict:
        return {
            "q_tables": [t.to_json() for t in self.q_tables],
            "alpha_params": self.alpha_model.table.to_json(),
            "step_count": self.step_count,
            "rng_state": self.rng.bit_generator.state,
            "config_hash": config_hash,
        }

    @classmethod
    def from_json(cls, doc: dict, n_actions, config: LearnerConfig) -> LearnerState:
        learner = cls(n_actions, config)
        for t, d in zip(learner.q_tables, doc["q_tables"]):
            t.load_json(d)
        learner.alpha_model.table.load_json(doc["alpha_params"])
        learner.step_count = int(doc["step_count"])
        learner.rng.bit_generator.state = doc["rng_state"]
        learner.refresh_targets()
        return learner


def select_action(learner: LearnerState, agent: int, obs_key: int, explore: bool = True) -> int:
    """Epsilon-greedy with exploration, plain greedy (lowest index on ties) without."""
    q = learner.q_values(agent, obs_key)
    if explore and learner.rng.random() < learner.epsilon.value(learner.step_count):
        return int(learner.rng.integers(len(q)))
    return int(np.argmax(q))


def _chosen_q(learner: LearnerState, obs, joint_action) -> np.ndarray:
    return np.array([learner.q_values(i, o)[a] for i, (o, a) in enumerate(zip(obs, joint_action))])


def alpha_hat(learner: LearnerState, state_key: int, obs, joint_action, agent: int, perms=None) -> float:
    """Sampled alpha for one agent; ``perms`` overrides the M random orderings."""
    if perms is None:
        perms = sample_permutations(learner.rng, 1, learner.alpha_model.M, learner.n_agents)[0]
    alpha = learner.alpha_model.alpha(state_key, _chosen_q(learner, obs, joint_action), perms)
    return float(alpha[agent])


def delta_hat(learner: LearnerState, state_key: int, obs, joint_action, agent: int,
              greedy_action: int | None = None, perms=None) -> float:
    if greedy_action is None:
        greedy_action = int(np.argmax(learner.q_values(agent, obs[agent])))
    if learner.vdn or joint_action[agent] == greedy_action:
        return 1.0
    return alpha_hat(learner, state_key, obs, joint_action, agent, perms)


def td_error(learner: LearnerState, transition: Transition, perms=None) -> float:
    tr = transition
    bootstrap = 0.0
    if not tr.terminal:
        rows = [learner.q_tables[i].row(o) for i, o in enumerate(tr.next_obs)]
        bootstrap = sum(float(learner.target_max(i, np.array([r]))[0]) for i, r in enumerate(rows))
    if perms is None and not learner.vdn:
        perms = sample_permutations(learner.rng, 1, learner.alpha_model.M, learner.n_agents)[0]
    q = _chosen_q(learner, tr.obs, tr.actions)
    deltas = [delta_hat(learner, tr.state, tr.obs, tr.actions, i, perms=perms) for i in range(learner.n_agents)]
    return tr.reward + learner.config.gamma * bootstrap - float(np.dot(deltas, q))


def flatten_batch(learner: LearnerState, batch) -> LossInputs:
    """Build loss inputs from a sampled buffer batch or a list of episodes."""
    if not isinstance(batch, dict):
        batch = {name: np.concatenate([getattr(e, name) for e in batch]) for name in ReplayBuffer.FIELDS}
    next_rows = batch["next_obs_rows"]
    bootstrap = sum(learner.target_max(i, next_rows[:, i]) for i in range(learner.n_agents))
    targets = batch["rewards"] + learner.config.gamma * np.where(batch["terminals"], 0.0, bootstrap)
    return LossInputs(batch["obs_rows"], batch["actions"], batch["alpha_rows"], targets)


def _apply_update(table: KeyedTable, grad: np.ndarray, lr: float, config: LearnerConfig) -> None:
    n = len(table)
    if config.optimizer == "sgd":
        table.values[:n] -= lr * grad
        return
    sq = table.sq[:n]
    sq *= config.rms_decay
    sq += (1.0 - config.rms_decay) * grad ** 2
    table.values[:n] -= lr * grad / (np.sqrt(sq) + config.rms_eps)


def train_step(learner: LearnerState, batch) -> float:
    """One gradient step on a sampled batch (or list of episodes); returns the mean squared TD error."""
    inputs = flatten_batch(learner, batch)
    B = len(inputs.targets)
    perms = None
    if not learner.vdn:
        perms = sample_permutations(learner.rng, B, learner.alpha_model.M, learner.n_agents)
    tables = [t.data for t in learner.q_tables]
    loss, q_grads, alpha_grad, _ = loss_and_grads(tables, learner.alpha_model.table.data, inputs, perms,
                                                  vdn=learner.vdn)
    for t, g in zip(learner.q_tables, q_grads):
        _apply_update(t, g, learner.config.lr_q, learner.config)
    if not learner.vdn:
        _apply_update(learner.alpha_model.table, alpha_grad, learner.config.lr_alpha, learner.config)
    learner.n_updates += 1
    return loss


def collect_episode(learner: LearnerState, env, explore: bool = True) -> Episode:
    step = env.reset()
    transitions = []
    limit = env.episode_limit
    while True:
        obs, state = step.obs, step.state
        actions = tuple(select_action(learner, i, o, explore) for i, o in enumerate(obs))
        step = env.step(actions)
        transitions.append(Transition(state, obs, actions, float(step.reward), step.state, step.obs,
                                      bool(step.terminal)))
        if explore:
            learner.step_count += 1
        if step.terminal or len(transitions) >= limit:
            break
    # a time-limit cut is treated like any other episode end
    last = transitions[-1]
    if not last.terminal:
        transitions[-1] = replace(last, terminal=True)
    if not np.all(np.isfinite([t.reward for t in transitions])):
        raise ValueError("environment produced a non-finite reward")
    tabs = learner.q_tables
    return Episode(
        transitions,
        np.array([[tabs[i].row(o) for i, o in enumerate(t.obs)] for t in transitions], dtype=np.int64),
        np.array([[tabs[i].row(o) for i, o in enumerate(t.next_obs)] for t in transitions], dtype=np.int64),
        np.array([learner.alpha_model.row(t.state) for t in transitions], dtype=np.int64),
        np.array([t.actions for t in transitions], dtype=np.int64),
        np.array([t.reward for t in transitions]),
        np.array([t.terminal for t in transitions]),
    )


@dataclass
class TrainingRecord:
    """Evaluation rows collected during training, one dict per evaluation point."""

    n_agents: int
    rows: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return ["step", "eval_median_return", *(f"eval_q_agent_{i}" for i in range(self.n_agents)),
                "eval_solved_rate", "eval_median_length", "loss"]

    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in self.columns])


def evaluate(learner: LearnerState, env, episodes: int) -> dict:
    """Greedy rollouts: median return, mean greedy Q per agent, solved fraction and median length."""
    returns, lengths, solved = [], [], []
    q_sums = np.zeros(learner.n_agents)
    q_count = 0
    for _ in range(episodes):
        ep = collect_episode(learner, env, explore=False)
        returns.append(ep.total_reward)
        lengths.append(len(ep))
        solved.append(bool(env.solved()) if hasattr(env, "solved") else False)
        for t in ep.transitions:
            q_sums += [learner.q_values(i, o).max() for i, o in enumerate(t.obs)]
            q_count += 1
    return {
        "eval_median_return": float(np.median(returns)),
        **{f"eval_q_agent_{i}": float(q_sums[i] / max(q_count, 1)) for i in range(learner.n_agents)},
        "eval_solved_rate": float(np.mean(solved)),
        "eval_median_length": float(np.median(lengths)),
    }


def train(learner: LearnerState, env, config: LearnerConfig | None = None, eval_env=None) -> TrainingRecord:
    """Collect, store, update and evaluate until ``t_max`` environment steps."""
    c = config or learner.config
    eval_env = eval_env if eval_env is not None else env
    record = TrainingRecord(learner.n_agents)
    next_eval = learner.step_count
    loss = math.nan
    while True:
        if learner.step_count >= next_eval or learner.step_count >= c.t_max:
            row = {"step": learner.step_count, **evaluate(learner, eval_env, c.eval_episodes), "loss": loss}
            record.rows.append(row)
            next_eval += c.eval_interval
            if learner.step_count >= c.t_max:
                break
        learner.buffer.add(collect_episode(learner, env, explore=True))
        if len(learner.buffer) >= c.batch_size:
            for _ in range(c.updates_per_episode):
                loss = train_step(learner, learner.buffer.sample(c.batch_size, learner.rng))
        if learner.step_count - learner.last_target_update >= c.target_update_interval:
            learner.refresh_targets()
    return record


def credit_report(learner: LearnerState, env, episodes: int = 1) -> list[dict]:
    """Greedy rollouts annotated with each agent's chosen action and its Q value."""
    rows = []
    for e in range(episodes):
        ep = collect_episode(learner, env, explore=False)
        for t, tr in enumerate(ep.transitions):
            for i, (o, a) in enumerate(zip(tr.obs, tr.actions)):
                rows.append({"episode": e, "t": t, "agent": i, "action": int(a),
                             "q": float(learner.q_values(i, o)[a])})
    return rows


def seed_streams(seed: int):
    """Independent generators for the learner, the training env and the evaluation env."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def run_seed(env_factory, config: LearnerConfig, seed: int):
    """Train one seed from scratch; ``env_factory(rng)`` builds an environment."""
    rng_learner, rng_env, rng_eval = seed_streams(seed)
    env = env_factory(rng_env)
    learner = LearnerState(env.n_actions, config, rng=rng_learner)
    record = train(learner, env, config, env_factory(rng_eval))
    return learner, record


def induced_weight_spec(params, q_tables, perms):
    """Weight spec implied by an alpha model on a tabular game.

    Args:
        params: (S, 3) F parameters per state.
        q_tables: per-agent arrays (S, A_i).
        perms: (S, M, N) orderings used for every entry of a state.

    Each entry ``(s, a_i)`` uses the agent's own Q at ``a_i`` with the other
    agents at their greedy actions; the result is ``w = 1/(N alpha)`` off the
    greedy action and ``1/N`` on it.
    """
    q = FactoredQ(tuple(np.asarray(t, dtype=float) for t in q_tables))
    n = q.n_agents
    greedy_vals = q.greedy_values().T  # (S, N)
    alphas = []
    for i, t in enumerate(q.tables):
        S, A = t.shape
        chosen = np.repeat(greedy_vals[:, None, :], A, axis=1).copy()  # (S, A, N)
        chosen[:, :, i] = t
        flat = chosen.reshape(S * A, n)
        means = coalition_means(flat, np.repeat(perms, A, axis=0))[:, i, :]
        a, _, _ = alpha_from_params(np.repeat(params, A, axis=0), means, flat[:, i:i + 1])
        alphas.append(a.reshape(S, A))
    return WeightSpec.from_alpha(alphas, q)
