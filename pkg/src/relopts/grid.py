"""Deterministic multi-agent grid environments.

Coordinates are (x, y) with 0 <= x < width and 0 <= y < height. LEFT/RIGHT
change x, UP/DOWN change y (UP decrements). All agents move simultaneously;
moves into walls, bounds, apples, or occupied cells resolve to no-move, and
contested empty cells go to the lowest agent index.

Agent types restrict both the observable feature set and the legal actions:
type 0 agents see (x, y) and use every action, type 1 agents see only x and
cannot move vertically, so their hidden y never changes. Feature vectors of
type 1 agents are padded with 0 at the y slot to live in the shared feature
space.

Foraging: apples occupy cells and block movement. An apple is consumed in a
step when the levels of the agents that are both Chebyshev-adjacent to it and
selecting LOAD sum to at least the apple's level; in forced-coop mode every
apple's level equals the sum of all agent levels, so the whole team must load
at once. Each consumed apple pays 1/|initial apples|, making the episode
return the fraction of apples eaten.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ActionError, ConfigError
from .rng import stream

# Actions
UP, DOWN, LEFT, RIGHT, LOAD, NOOP = range(6)
N_ACTIONS = 6
ACTION_NAMES = ("up", "down", "left", "right", "load", "noop")
_MOVES = {UP: (0, -1), DOWN: (0, 1), LEFT: (-1, 0), RIGHT: (1, 0)}

# Agent types. Feature order in the unified space is (x, y).
TYPE_FULL = 0
TYPE_X_ONLY = 1
N_FEATURES = 2
FEATURE_NAMES = ("x", "y")

# feature mask and legal actions per type
TYPE_FEATURES = {
    TYPE_FULL: (True, True),
    TYPE_X_ONLY: (True, False),
}
TYPE_ACTIONS = {
    TYPE_FULL: (UP, DOWN, LEFT, RIGHT, LOAD, NOOP),
    TYPE_X_ONLY: (LEFT, RIGHT, LOAD, NOOP),
}
PAD_VALUE = 0.0


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    n_agents: int
    agent_types: tuple[int, ...] = ()
    agent_levels: tuple[int, ...] = ()
    apples: tuple[tuple[tuple[int, int], int], ...] = ()  # ((x, y), level)
    forced_coop: bool = False
    walls: frozenset[tuple[int, int]] = frozenset()
    horizon: int = 50
    seed: int = 0

    def __post_init__(self):
        if not self.agent_types:
            object.__setattr__(self, "agent_types", (TYPE_FULL,) * self.n_agents)
        if not self.agent_levels:
            object.__setattr__(self, "agent_levels", (1,) * self.n_agents)
        self.validate()

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ConfigError("grid must be at least 2x2")
        if self.n_agents < 2:
            raise ConfigError("need at least 2 agents")
        if len(self.agent_types) != self.n_agents:
            raise ConfigError("agent_types length != n_agents")
        if len(self.agent_levels) != self.n_agents:
            raise ConfigError("agent_levels length != n_agents")
        for t in self.agent_types:
            if t not in TYPE_FEATURES:
                raise ConfigError(f"unknown agent type {t}")
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        seen = set()
        for (cell, level) in self.apples:
            if not self.in_bounds(cell):
                raise ConfigError(f"apple {cell} out of bounds")
            if cell in self.walls:
                raise ConfigError(f"apple {cell} on a wall")
            if cell in seen:
                raise ConfigError(f"duplicate apple cell {cell}")
            seen.add(cell)
            if level < 1:
                raise ConfigError("apple level must be >= 1")
            if self.forced_coop and level != sum(self.agent_levels):
                raise ConfigError("forced-coop apples must have level == sum of agent levels")
        for w in self.walls:
            if not self.in_bounds(w):
                raise ConfigError(f"wall {w} out of bounds")
        if len(self.free_cells()) < self.n_agents:
            raise ConfigError("too few free cells for the agent count")

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def free_cells(self) -> list[tuple[int, int]]:
        """Spawnable cells: in bounds, not a wall, not an apple."""
        apple_cells = {c for c, _ in self.apples}
        return [
            (x, y)
            for x in range(self.width)
            for y in range(self.height)
            if (x, y) not in self.walls and (x, y) not in apple_cells
        ]

    def legal_actions(self, agent: int) -> tuple[int, ...]:
        return TYPE_ACTIONS[self.agent_types[agent]]


@dataclass(frozen=True)
class JointState:
    agent_cells: tuple[tuple[int, int], ...]
    agent_levels: tuple[int, ...]
    apples_remaining: frozenset[int]  # indices into spec.apples
    step_count: int

    def key(self) -> tuple:
        """Hashable canonical identity (sorted apple indices)."""
        return (self.agent_cells, tuple(sorted(self.apples_remaining)), self.step_count)

    def position_key(self) -> tuple:
        """Identity ignoring time (used by graphs and value tables)."""
        return (self.agent_cells, tuple(sorted(self.apples_remaining)))


@dataclass(frozen=True)
class Observation:
    own_state: tuple[float, ...]
    teammate_offsets: tuple[tuple[float, ...], ...]
    teammate_near_apple: tuple[bool, ...]
    type_ids: tuple[int, ...]


def reset(spec: GridSpec, seed: int) -> JointState:
    """Spawn agents uniformly (without replacement) over free cells."""
    free = spec.free_cells()
    if len(free) < spec.n_agents:
        raise ConfigError("too few free cells for the agent count")
    rng = stream(seed, "env/reset")
    picks = rng.choice(len(free), size=spec.n_agents, replace=False)
    cells = tuple(free[int(i)] for i in picks)
    return JointState(
        agent_cells=cells,
        agent_levels=tuple(spec.agent_levels),
        apples_remaining=frozenset(range(len(spec.apples))),
        step_count=0,
    )


def _near_apple(cell: tuple[int, int], state: JointState, spec: GridSpec) -> bool:
    for idx in state.apples_remaining:
        ax, ay = spec.apples[idx][0]
        if max(abs(cell[0] - ax), abs(cell[1] - ay)) <= 1:
            return True
    return False


def observe(state: JointState, spec: GridSpec) -> tuple[Observation, ...]:
    """Deterministic observations: own features plus full teammate offsets."""
    fs = factorize(state, spec)
    obs = []
    for i in range(spec.n_agents):
        offsets = tuple(
            tuple(fs[j][k] - fs[i][k] for k in range(N_FEATURES))
            for j in range(spec.n_agents)
            if j != i
        )
        flags = tuple(
            _near_apple(state.agent_cells[j], state, spec)
            for j in range(spec.n_agents)
            if j != i
        )
        obs.append(
            Observation(
                own_state=fs[i],
                teammate_offsets=offsets,
                teammate_near_apple=flags,
                type_ids=tuple(spec.agent_types),
            )
        )
    return tuple(obs)


def factorize(state: JointState, spec: GridSpec) -> tuple[tuple[float, ...], ...]:
    """Per-agent feature vectors in the unified (x, y) space, padded per type."""
    out = []
    for i, (x, y) in enumerate(state.agent_cells):
        mask = TYPE_FEATURES[spec.agent_types[i]]
        vec = (float(x) if mask[0] else PAD_VALUE, float(y) if mask[1] else PAD_VALUE)
        out.append(vec)
    return tuple(out)


def step(
    state: JointState, joint_action: tuple[int, ...] | list[int], spec: GridSpec
) -> tuple[JointState, float, tuple[Observation, ...], bool]:
    """Apply one simultaneous joint action. Pure function of its inputs."""
    if len(joint_action) != spec.n_agents:
        raise ActionError("need one action per agent")
    for i, a in enumerate(joint_action):
        if a not in range(N_ACTIONS):
            raise ActionError(f"unknown action id {a}")
        if a not in spec.legal_actions(i):
            raise ActionError(f"action {ACTION_NAMES[a]} illegal for agent {i} (type {spec.agent_types[i]})")

    apple_cells = {spec.apples[i][0] for i in state.apples_remaining}
    positions = list(state.agent_cells)
    # moves resolve in ascending agent index; losers stay put
    for i, a in enumerate(joint_action):
        if a not in _MOVES:
            continue
        dx, dy = _MOVES[a]
        target = (positions[i][0] + dx, positions[i][1] + dy)
        if not spec.in_bounds(target) or target in spec.walls or target in apple_cells:
            continue
        if any(positions[j] == target for j in range(spec.n_agents) if j != i):
            continue
        positions[i] = target

    # apple consumption: adjacency is evaluated on the post-move positions
    reward = 0.0
    remaining = set(state.apples_remaining)
    n_initial = len(spec.apples)
    for idx in sorted(state.apples_remaining):
        (ax, ay), level = spec.apples[idx]
        loaders = sum(
            state.agent_levels[i]
            for i in range(spec.n_agents)
            if joint_action[i] == LOAD
            and max(abs(positions[i][0] - ax), abs(positions[i][1] - ay)) <= 1
        )
        if loaders >= level:
            remaining.discard(idx)
            reward += 1.0 / n_initial

    new_state = JointState(
        agent_cells=tuple(positions),
        agent_levels=state.agent_levels,
        apples_remaining=frozenset(remaining),
        step_count=state.step_count + 1,
    )
    done = new_state.step_count >= spec.horizon or (n_initial > 0 and not remaining)
    return new_state, reward, observe(new_state, spec), done


def single_agent_adjacency(spec: GridSpec, agent_type: int = TYPE_FULL) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Cells and 0/1 adjacency of one agent of `agent_type` moving alone.

    Apples and other agents are ignored; walls and bounds apply. Used by the
    exact-distance oracle and connectivity checks.
    """
    cells = [
        (x, y)
        for x in range(spec.width)
        for y in range(spec.height)
        if (x, y) not in spec.walls
    ]
    index = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    adj = np.zeros((n, n), dtype=np.int64)
    moves = [m for a, m in _MOVES.items() if a in TYPE_ACTIONS[agent_type]]
    for (x, y), i in index.items():
        for dx, dy in moves:
            t = (x + dx, y + dy)
            if t in index:
                adj[i, index[t]] = 1
    return cells, adj


def empty_grid(width: int, height: int, n_agents: int, horizon: int = 50, seed: int = 0,
               agent_types: tuple[int, ...] = ()) -> GridSpec:
    return GridSpec(width=width, height=height, n_agents=n_agents, horizon=horizon,
                    seed=seed, agent_types=agent_types)


def forced_coop_grid(width: int, height: int, n_agents: int,
                     apple_cells: tuple[tuple[int, int], ...],
                     horizon: int = 50, seed: int = 0) -> GridSpec:
    level = n_agents  # unit levels
    apples = tuple((c, level) for c in apple_cells)
    return GridSpec(width=width, height=height, n_agents=n_agents, apples=apples,
                    forced_coop=True, horizon=horizon, seed=seed)


def with_horizon(spec: GridSpec, horizon: int) -> GridSpec:
    return replace(spec, horizon=horizon)
