"""Global-reward environments with discrete observation and state keys.

Every environment exposes ``n_agents``, ``n_actions`` (one count per agent),
``episode_limit``, ``reset() -> EnvStep`` and ``step(actions) -> EnvStep``.
Randomness comes only from the generator passed at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import MarkovConvexGame, generate_convex_game


@dataclass(frozen=True)
class EnvStep:
    obs: tuple[int, ...]
    state: int
    reward: float
    terminal: bool
    info: dict = field(default_factory=dict)


@dataclass
class MatrixGameConfig:
    payoff: list
    episode_length: int = 1

    @property
    def shape(self) -> tuple[int, ...]:
        return np.asarray(self.payoff).shape


class MatrixGame:
    """A repeated one-state game; state and observations are the step index."""

    def __init__(self, config: MatrixGameConfig, rng=None):
        self.config = config
        self.payoff = np.asarray(config.payoff, dtype=float)
        self.n_agents = self.payoff.ndim
        self.n_actions = list(self.payoff.shape)
        self.episode_limit = config.episode_length
        self.t = 0

    def reset(self) -> EnvStep:
        self.t = 0
        return EnvStep((0,) * self.n_agents, 0, 0.0, False)

    def step(self, actions) -> EnvStep:
        return matrix_game_step(self, actions)


def matrix_game_step(env: MatrixGame, actions) -> EnvStep:
    actions = tuple(int(a) for a in actions)
    if len(actions) != env.n_agents:
        raise ValueError(f"expected {env.n_agents} actions, got {len(actions)}")
    for i, a in enumerate(actions):
        if not 0 <= a < env.n_actions[i]:
            raise ValueError(f"action {a} out of range for agent {i}")
    reward = float(env.payoff[actions])
    env.t += 1
    return EnvStep((env.t,) * env.n_agents, env.t, reward, env.t >= env.episode_limit)


class MCGEnv:
    """Run a tabular game as an episodic environment with full observability.

    The reward is the grand coalition's reward. Episodes start in
    ``start_state`` and last ``horizon`` steps.
    """

    def __init__(self, game: MarkovConvexGame, horizon: int, rng=None, start_state: int = 0):
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.game = game
        self.n_agents = game.n_agents
        self.n_actions = list(game.actions_per_agent)
        self.episode_limit = horizon
        self.start_state = start_state
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.s = start_state
        self.t = 0

    def reset(self) -> EnvStep:
        self.s = self.start_state
        self.t = 0
        return EnvStep((self.s,) * self.n_agents, self.s, 0.0, False)

    def step(self, actions) -> EnvStep:
        a = self.game.joint_rank(actions)
        reward = float(self.game.global_reward[self.s, a])
        self.s = int(self.rng.choice(self.game.n_states, p=self.game.transition[self.s, a]))
        self.t += 1
        return EnvStep((self.s,) * self.n_agents, self.s, reward, self.t >= self.episode_limit)


def mcg_as_env(game: MarkovConvexGame, horizon: int, rng=None, start_state: int = 0) -> MCGEnv:
    return MCGEnv(game, horizon, rng, start_state)


STAY, UP, DOWN, LEFT, RIGHT, CAPTURE = range(6)
MOVES = {STAY: (0, 0), UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))

EMPTY, WALL, PREDATOR, PREY = range(4)


@dataclass
class PredatorPreyConfig:
    grid_size: int = 5
    n_predators: int = 2
    n_preys: int = 2
    capture_reward: float = 10.0
    penalty_p: float = -0.5
    obs_window: int = 3
    episode_limit: int = 100

    def __post_init__(self):
        if self.obs_window % 2 != 1 or self.obs_window > self.grid_size:
            raise ValueError("obs_window must be odd and no larger than grid_size")
        if self.n_predators < 1 or self.n_preys < 1:
            raise ValueError("need at least one predator and one prey")
        if self.penalty_p > 0:
            raise ValueError("penalty_p must be <= 0")
        if self.n_predators + self.n_preys > self.grid_size ** 2:
            raise ValueError("grid too small for all animals")


@dataclass
class PredatorPreyState:
    predators: list[tuple[int, int]]
    preys: list[tuple[int, int]]
    alive: list[bool]
    t: int = 0

    def copy(self) -> PredatorPreyState:
        return PredatorPreyState(list(self.predators), list(self.preys), list(self.alive), self.t)


class PredatorPrey:
    """Grid hunt where a prey dies only when two adjacent predators capture it together.

    Actions are stay, up, down, left, right and capture. A capture action
    targets the lowest-indexed live prey in the predator's 4-neighbourhood;
    a prey targeted by at least two predators is removed and pays
    ``capture_reward``. Every predator whose targeted prey survives pays
    ``penalty_p``. Capture with no adjacent prey does nothing. Predators then
    move in index order (blocked moves stay put), and live preys take a
    uniformly random feasible move, also in index order.
    """

    def __init__(self, config: PredatorPreyConfig | None = None, rng=None):
        self.config = config or PredatorPreyConfig()
        self.n_agents = self.config.n_predators
        self.n_actions = [6] * self.n_agents
        self.episode_limit = self.config.episode_limit
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state: PredatorPreyState | None = None

    def reset(self) -> EnvStep:
        c = self.config
        cells = self.rng.choice(c.grid_size ** 2, size=c.n_predators + c.n_preys, replace=False)
        pos = [divmod(int(x), c.grid_size) for x in cells]
        self.state = PredatorPreyState(pos[:c.n_predators], pos[c.n_predators:], [True] * c.n_preys)
        return EnvStep(self.observations(), self.state_key(), 0.0, False)

    def solved(self) -> bool:
        return self.state is not None and not any(self.state.alive)

    def step(self, actions) -> EnvStep:
        self.state, reward, info = predator_prey_step(self.state, actions, self.config, self.rng)
        terminal = not any(self.state.alive) or self.state.t >= self.config.episode_limit
        return EnvStep(self.observations(), self.state_key(), reward, terminal, info)

    def state_key(self) -> int:
        return predator_prey_state_key(self.state, self.config)

    def observations(self) -> tuple[int, ...]:
        return tuple(observation_key(self.state, self.config, i) for i in range(self.n_agents))


def _inside(cell, n):
    return 0 <= cell[0] < n and 0 <= cell[1] < n


def predator_prey_step(state: PredatorPreyState, actions, config: PredatorPreyConfig, rng):
    """Advance one step; returns ``(new_state, reward, info)`` and leaves ``state`` untouched."""
    n = config.grid_size
    actions = [int(a) for a in actions]
    if len(actions) != config.n_predators or any(not 0 <= a <= CAPTURE for a in actions):
        raise ValueError(f"invalid joint action {actions}")
    new = state.copy()

    targets = {}
    for i, a in enumerate(actions):
        if a != CAPTURE:
            continue
        r, c = new.predators[i]
        for k, prey in enumerate(new.preys):
            if new.alive[k] and abs(prey[0] - r) + abs(prey[1] - c) == 1:
                targets[i] = k
                break
    reward = 0.0
    captured = []
    failed = []
    for k in sorted(set(targets.values())):
        hunters = [i for i, t in targets.items() if t == k]
        if len(hunters) >= 2:
            new.alive[k] = False
            reward += config.capture_reward
            captured.append(k)
        else:
            failed.extend(hunters)
    reward += config.penalty_p * len(failed)

    occupied = set(new.predators) | {p for p, alive in zip(new.preys, new.alive) if alive}
    for i, a in enumerate(actions):
        if a == CAPTURE or a == STAY:
            continue
        dr, dc = MOVES[a]
        src = new.predators[i]
        dst = (src[0] + dr, src[1] + dc)
        if _inside(dst, n) and dst not in occupied:
            occupied.discard(src)
            occupied.add(dst)
            new.predators[i] = dst

    for k, prey in enumerate(new.preys):
        if not new.alive[k]:
            continue
        options = [prey]
        for dr, dc in NEIGHBOURS:
            dst = (prey[0] + dr, prey[1] + dc)
            if _inside(dst, n) and dst not in occupied:
                options.append(dst)
        dst = options[int(rng.integers(len(options)))]
        occupied.discard(prey)
        occupied.add(dst)
        new.preys[k] = dst
    new.t += 1
    return new, reward, {"captured": captured, "failed_attempts": failed}


def predator_prey_state_key(state: PredatorPreyState, config: PredatorPreyConfig) -> int:
    """Mixed-radix code of every position; dead preys use the extra digit ``grid_size**2``."""
    n2 = config.grid_size ** 2
    key = 0
    for r, c in state.predators:
        key = key * (n2 + 1) + r * config.grid_size + c
    for (r, c), alive in zip(state.preys, state.alive):
        key = key * (n2 + 1) + (r * config.grid_size + c if alive else n2)
    return key


def observation_key(state: PredatorPreyState, config: PredatorPreyConfig, agent: int) -> int:
    """Base-4 code of the window centred on ``agent``, row-major, own cell included."""
    n = config.grid_size
    half = config.obs_window // 2
    occupant = {}
    for j, p in enumerate(state.predators):
        if j != agent:
            occupant[p] = PREDATOR
    for p, alive in zip(state.preys, state.alive):
        if alive:
            occupant[p] = PREY
    r0, c0 = state.predators[agent]
    key = 0
    for dr in range(-half, half + 1):
        for dc in range(-half, half + 1):
            cell = (r0 + dr, c0 + dc)
            code = occupant.get(cell, EMPTY) if _inside(cell, n) else WALL
            key = key * 4 + code
    return key


def decode_observation(key: int, window: int) -> np.ndarray:
    codes = []
    for _ in range(window * window):
        key, code = divmod(key, 4)
        codes.append(code)
    return np.array(codes[::-1]).reshape(window, window)


def make_env(spec: dict, rng=None):
    """Build an environment from a JSON-style description with a ``type`` field."""
    kind = spec.get("type")
    params = {k: v for k, v in spec.items() if k != "type"}
    if kind == "matrix":
        return MatrixGame(MatrixGameConfig(**params), rng)
    if kind == "predator_prey":
        return PredatorPrey(PredatorPreyConfig(**params), rng)
    if kind == "mcg":
        if "game_path" in params:
            game = MarkovConvexGame.load(params.pop("game_path"))
        else:
            game = generate_convex_game(**params.pop("generator"))
        return MCGEnv(game, rng=rng, **params)
    raise ValueError(f"unknown environment type {kind!r}")
