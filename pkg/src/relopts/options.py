"""Joint eigenoptions: intrinsic rewards, tabular IQL training, rollouts.

One option per (eigenvector, sign). The intrinsic reward for a transition is
sign * (e[rep(s')] - e[rep(s)]), which telescopes along trajectories. Each
agent learns an independent tabular policy over its state key plus a
termination action; the option ends when every agent selects termination
simultaneously, at the step cap, or when the environment episode ends.

State keys come in two modes. "joint" indexes the full joint position tuple
(exact, viable on small grids). "relative" keys each agent by its clipped
offset to the rounded Fermat point, which generalizes across translations
and is the tabular stand-in for the observation networks that make large
grids tractable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .abstraction import Abstraction
from .errors import NumericsError, StateError
from .grid import GridSpec, JointState, NOOP, reset, step
from .rng import stream

TERM = "term"  # rendered as action index n_legal in each agent's table


@dataclass(frozen=True)
class IntrinsicRewardSpec:
    eigen_index: int      # 1-based; 1 is the trivial constant eigenvector
    sign: int             # +1 or -1

    @property
    def column(self) -> int:
        return self.eigen_index - 1


@dataclass
class OptionConfig:
    steps: int = 120_000          # env-step budget
    alpha: float = 0.25
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_decay_frac: float = 0.5   # fraction of budget to anneal over
    step_cap: int = 50
    state_mode: str = "relative"  # "relative" | "joint"
    offset_clip: int = 10


class JointOption:
    def __init__(self, option_id: str, reward: IntrinsicRewardSpec, spec: GridSpec,
                 cfg: OptionConfig):
        self.id = option_id
        self.reward = reward
        self.cfg = cfg
        self.n_w = spec.n_agents
        self.step_cap = cfg.step_cap
        self.legal = [list(spec.legal_actions(i)) for i in range(spec.n_agents)]
        self.q: list[dict[tuple, np.ndarray]] = [dict() for _ in range(spec.n_agents)]
        self.trained = False

    def n_choices(self, agent: int) -> int:
        return len(self.legal[agent]) + 1  # + termination

    def term_index(self, agent: int) -> int:
        return len(self.legal[agent])

    def row(self, agent: int, key: tuple) -> np.ndarray:
        r = self.q[agent].get(key)
        if r is None:
            r = np.zeros(self.n_choices(agent))
            self.q[agent][key] = r
        return r

    def state_key(self, agent: int, state: JointState, spec: GridSpec,
                  abstraction: Abstraction) -> tuple:
        if self.cfg.state_mode == "joint":
            return state.position_key()
        fermat = abstraction.fermat_point(state, spec)
        cx, cy = state.agent_cells[agent]
        c = self.cfg.offset_clip
        dx = int(np.clip(round(cx - fermat[0]), -c, c))
        dy = int(np.clip(round(cy - fermat[1]), -c, c))
        return (dx, dy)

    def greedy_choice(self, agent: int, key: tuple) -> int:
        return int(np.argmax(self.row(agent, key)))

    def greedy_is_term(self, agent: int, key: tuple) -> bool:
        return self.greedy_choice(agent, key) == self.term_index(agent)

    def choice_to_action(self, agent: int, choice: int) -> int:
        """Env action for a policy choice; termination maps to NOOP."""
        if choice == self.term_index(agent):
            return NOOP
        return self.legal[agent][choice]

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "eigen_index": self.reward.eigen_index,
            "sign": self.reward.sign,
            "n_w": self.n_w,
            "step_cap": self.step_cap,
            "state_mode": self.cfg.state_mode,
            "q": [
                {json.dumps(list(k)): row.tolist() for k, row in table.items()}
                for table in self.q
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict, spec: GridSpec, cfg: OptionConfig) -> "JointOption":
        cfg.state_mode = obj["state_mode"]
        cfg.step_cap = obj["step_cap"]
        opt = cls(obj["id"], IntrinsicRewardSpec(obj["eigen_index"], obj["sign"]), spec, cfg)
        for agent, table in enumerate(obj["q"]):
            for k, row in table.items():
                key = tuple(tuple(v) if isinstance(v, list) else v for v in json.loads(k))
                opt.q[agent][key] = np.asarray(row, dtype=np.float64)
        opt.trained = True
        return opt


def intrinsic_reward(reward: IntrinsicRewardSpec, abstraction: Abstraction,
                     s: JointState, s2: JointState, spec: GridSpec) -> float:
    e = abstraction.eigen_values_at(s, spec)[reward.column]
    e2 = abstraction.eigen_values_at(s2, spec)[reward.column]
    return reward.sign * float(e2 - e)


def train_option(spec: GridSpec, reward: IntrinsicRewardSpec, abstraction: Abstraction,
                 cfg: OptionConfig, seed: int = 0, option_id: str | None = None) -> JointOption:
    """Independent epsilon-greedy Q-learning on the intrinsic reward.

    Episodes are option executions: they end on unanimous termination, at the
    step cap, or when the environment episode ends. Environment reward is
    ignored; the spectral basis and abstraction are read-only here.
    """
    if option_id is None:
        option_id = f"e{reward.eigen_index}{'+' if reward.sign > 0 else '-'}"
    option = JointOption(option_id, reward, spec, cfg)
    n = spec.n_agents
    rng = stream(seed, f"option/{option_id}")
    total = 0
    episode = 0
    anneal = max(1, int(cfg.steps * cfg.eps_decay_frac))

    while total < cfg.steps:
        state = reset(spec, seed=int(rng.integers(2 ** 31)))
        episode += 1
        for _ in range(cfg.step_cap):
            eps = cfg.eps_start + (cfg.eps_final - cfg.eps_start) * min(1.0, total / anneal)
            keys = [option.state_key(i, state, spec, abstraction) for i in range(n)]
            choices = []
            for i in range(n):
                if rng.random() < eps:
                    choices.append(int(rng.integers(option.n_choices(i))))
                else:
                    choices.append(option.greedy_choice(i, keys[i]))
            if all(choices[i] == option.term_index(i) for i in range(n)):
                for i in range(n):
                    row = option.row(i, keys[i])
                    row[choices[i]] += cfg.alpha * (0.0 - row[choices[i]])
                break
            actions = tuple(option.choice_to_action(i, choices[i]) for i in range(n))
            nxt, _, _, done = step(state, actions, spec)
            r = intrinsic_reward(reward, abstraction, state, nxt, spec)
            total += 1
            terminal = done
            next_keys = None if terminal else [
                option.state_key(i, nxt, spec, abstraction) for i in range(n)
            ]
            for i in range(n):
                row = option.row(i, keys[i])
                target = r if terminal else r + cfg.gamma * float(np.max(option.row(i, next_keys[i])))
                row[choices[i]] += cfg.alpha * (target - row[choices[i]])
                if abs(row[choices[i]]) > 1e6:
                    raise NumericsError("diverging option value table")
            state = nxt
            if done or total >= cfg.steps:
                break
    option.trained = True
    return option


@dataclass
class OptionRollout:
    states: list[JointState]
    actions: list[tuple[int, ...]]
    rewards: list[float]
    final_state: JointState
    reason: str               # "term" | "cap" | "env_done"
    eigen_first: float = 0.0
    eigen_last: float = 0.0


def rollout_option(option: JointOption, state: JointState, spec: GridSpec,
                   abstraction: Abstraction, max_steps: int | None = None) -> OptionRollout:
    """Greedy execution from `state` until the termination condition fires."""
    if not option.trained:
        raise StateError("option is not trained")
    cap = option.step_cap if max_steps is None else max_steps
    n = spec.n_agents
    col = option.reward.column
    states = [state]
    actions: list[tuple[int, ...]] = []
    rewards: list[float] = []
    e_first = float(abstraction.eigen_values_at(state, spec)[col]) * option.reward.sign
    reason = "cap"
    for _ in range(cap):
        keys = [option.state_key(i, state, spec, abstraction) for i in range(n)]
        choices = [option.greedy_choice(i, keys[i]) for i in range(n)]
        if all(choices[i] == option.term_index(i) for i in range(n)):
            reason = "term"
            break
        acts = tuple(option.choice_to_action(i, choices[i]) for i in range(n))
        nxt, _, _, done = step(state, acts, spec)
        rewards.append(intrinsic_reward(option.reward, abstraction, state, nxt, spec))
        actions.append(acts)
        state = nxt
        states.append(state)
        if done:
            reason = "env_done"
            break
    e_last = float(abstraction.eigen_values_at(state, spec)[col]) * option.reward.sign
    return OptionRollout(states=states, actions=actions, rewards=rewards,
                         final_state=state, reason=reason,
                         eigen_first=e_first, eigen_last=e_last)
