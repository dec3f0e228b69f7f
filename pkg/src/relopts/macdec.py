"""Joint-option MacDec layer: augmented action space, consensus voting,
option execution with SMDP backups, and downstream independent Q-learning.

Macro-action ids are globally consistent: ids below the primitive action
count are environment actions, id N_ACTIONS + j is option j. Each agent
selects among its legal primitives plus every option. A joint option starts
only when at least n_w agents (full team here) select the same id in the same
step; agents whose vote fails execute No-Op and re-decide next step, and
their controller row is charged the one-step outcome of that failed vote.

During option execution control stays with the option policies until
unanimous termination, the step cap, or episode end; with interruption on,
any participant whose controller values re-deciding above continuing aborts
the option. The executing agent's controller row receives the standard SMDP
backup (discounted return plus gamma^tau bootstrap); other options whose
greedy actions exactly match an executed joint step receive one-step
intra-option backups, and primitive rows are trained on every executed step.

With an empty option list the whole machinery reduces exactly to flat
independent Q-learning: same stream discipline, same tie-breaks, identical
transcripts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .abstraction import Abstraction
from .errors import ActionError
from .grid import GridSpec, JointState, N_ACTIONS, NOOP, reset, step
from .options import JointOption
from .rng import stream


@dataclass
class DownstreamConfig:
    steps: int = 150_000
    alpha: float = 0.2
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_final: float = 0.05
    eps_decay_frac: float = 0.6
    eps_eval: float = 0.05
    eval_every: int = 25_000
    eval_episodes: int = 32
    interruption: bool = True
    intra_option: bool = True
    primitives_on_option_steps: bool = True
    record_transcript: bool = False


@dataclass
class ExecutionPlan:
    kind: str                       # "option" | "primitives"
    option_id: int | None = None
    participants: tuple[int, ...] = ()
    primitives: tuple[int, ...] = ()


def macro_space(spec: GridSpec, n_options: int) -> list[list[int]]:
    """Per-agent selectable macro ids: legal primitives then every option."""
    option_ids = [N_ACTIONS + j for j in range(n_options)]
    return [list(spec.legal_actions(i)) + option_ids for i in range(spec.n_agents)]


def resolve_votes(selections, n_options: int, n_w: int) -> ExecutionPlan:
    """Single-step vote resolution.

    An option with at least n_w identical votes executes (lowest option id if
    several qualify); otherwise primitive selections execute and failed
    voters fall back to No-Op for this step.
    """
    votes: dict[int, int] = {}
    for m in selections:
        if m >= N_ACTIONS + n_options or m < 0:
            raise ActionError(f"unknown macro id {m}")
        if m >= N_ACTIONS:
            votes[m] = votes.get(m, 0) + 1
    for oid in sorted(votes):
        if votes[oid] >= n_w:
            participants = tuple(i for i, m in enumerate(selections) if m == oid)
            return ExecutionPlan(kind="option", option_id=oid, participants=participants)
    prims = tuple(m if m < N_ACTIONS else NOOP for m in selections)
    return ExecutionPlan(kind="primitives", primitives=prims)


class ControllerQ:
    def __init__(self, spec: GridSpec, n_options: int):
        self.n_macro = N_ACTIONS + n_options
        self.selectable = macro_space(spec, n_options)
        self.tables: list[dict[tuple, np.ndarray]] = [dict() for _ in range(spec.n_agents)]

    def row(self, agent: int, key: tuple) -> np.ndarray:
        r = self.tables[agent].get(key)
        if r is None:
            r = np.zeros(self.n_macro)
            self.tables[agent][key] = r
        return r

    def greedy(self, agent: int, key: tuple) -> int:
        ids = self.selectable[agent]
        row = self.row(agent, key)
        return ids[int(np.argmax(row[ids]))]   # first max = lowest selectable id

    def value(self, agent: int, key: tuple) -> float:
        ids = self.selectable[agent]
        return float(np.max(self.row(agent, key)[ids]))


@dataclass
class StepRecord:
    key_before: tuple
    key_after: tuple
    state_before: JointState
    state_after: JointState
    actions: tuple[int, ...]
    reward: float
    done: bool


@dataclass
class MacroRecord:
    key_start: tuple
    selections: tuple[int, ...]
    plan: ExecutionPlan
    steps: list[StepRecord]
    smdp_return: float
    duration: int
    reason: str


def _obs_key(state: JointState) -> tuple:
    return state.position_key()


def intra_option_update(records: list[StepRecord], options: list[JointOption],
                        option_ids: list[int], controller: ControllerQ,
                        cfg: DownstreamConfig, abstraction: Abstraction | None,
                        spec: GridSpec, skip_id: int | None = None) -> int:
    """One-step intra-option backups for every other matching option.

    An option matches a step when each agent's greedy action (termination
    rendered as No-Op) equals the executed action. Returns the backup count.
    """
    count = 0
    n = spec.n_agents
    for opt, oid in zip(options, option_ids):
        if oid == skip_id:
            continue
        for rec in records:
            keys = [opt.state_key(i, rec.state_before, spec, abstraction) for i in range(n)]
            choices = [opt.greedy_choice(i, keys[i]) for i in range(n)]
            if any(opt.choice_to_action(i, choices[i]) != rec.actions[i] for i in range(n)):
                continue
            nkeys = [opt.state_key(i, rec.state_after, spec, abstraction) for i in range(n)]
            continues = not all(opt.greedy_is_term(i, nkeys[i]) for i in range(n))
            for i in range(n):
                row = controller.row(i, rec.key_before)
                if rec.done:
                    u = 0.0
                elif continues:
                    u = float(controller.row(i, rec.key_after)[oid])
                else:
                    u = controller.value(i, rec.key_after)
                target = rec.reward + cfg.gamma * u
                row[oid] += cfg.alpha * (target - row[oid])
            count += 1
    return count


def _primitive_updates(records: list[StepRecord], controller: ControllerQ,
                       cfg: DownstreamConfig, n_agents: int) -> None:
    for rec in records:
        for i in range(n_agents):
            row = controller.row(i, rec.key_before)
            boot = 0.0 if rec.done else controller.value(i, rec.key_after)
            target = rec.reward + cfg.gamma * boot
            a = rec.actions[i]
            row[a] += cfg.alpha * (target - row[a])


class DownstreamTrainer:
    """Owns the controller, options, and rng streams for one seed."""

    def __init__(self, spec: GridSpec, options: list[JointOption], cfg: DownstreamConfig,
                 seed: int, abstraction: Abstraction | None = None):
        if abstraction is None and any(o.cfg.state_mode == "relative" for o in options):
            raise ActionError("relative-mode options require their abstraction")
        self.spec = spec
        self.options = options
        self.option_ids = [N_ACTIONS + j for j in range(len(options))]
        self.cfg = cfg
        self.seed = seed
        self.abstraction = abstraction
        self.controller = ControllerQ(spec, len(options))
        self.env_rng = stream(seed, "downstream/env")
        self.agent_rngs = [stream(seed, f"downstream/agent{i}") for i in range(spec.n_agents)]
        self.total_steps = 0
        self.transcript: list[tuple] = []
        self.curve: list[dict] = []

    # -- selection -------------------------------------------------------

    def _epsilon(self) -> float:
        anneal = max(1, int(self.cfg.steps * self.cfg.eps_decay_frac))
        frac = min(1.0, self.total_steps / anneal)
        return self.cfg.eps_start + (self.cfg.eps_final - self.cfg.eps_start) * frac

    def _select(self, agent: int, key: tuple, eps: float,
                rng: np.random.Generator) -> int:
        ids = self.controller.selectable[agent]
        if rng.random() < eps:
            return ids[int(rng.integers(len(ids)))]
        return self.controller.greedy(agent, key)

    # -- one macro decision point -----------------------------------------

    def run_macro_step(self, state: JointState) -> tuple[MacroRecord, JointState, bool]:
        cfg = self.cfg
        n = self.spec.n_agents
        eps = self._epsilon()
        key0 = _obs_key(state)
        selections = tuple(
            self._select(i, key0, eps, self.agent_rngs[i]) for i in range(n)
        )
        plan = resolve_votes(selections, len(self.options), n_w=n)

        if plan.kind == "primitives":
            nxt, reward, _, done = step(state, plan.primitives, self.spec)
            self.total_steps += 1
            key1 = _obs_key(nxt)
            rec = StepRecord(key0, key1, state, nxt, plan.primitives, reward, done)
            for i in range(n):
                row = self.controller.row(i, key0)
                boot = 0.0 if done else self.controller.value(i, key1)
                target = reward + cfg.gamma * boot
                m = selections[i]   # failed voters charge their chosen option
                row[m] += cfg.alpha * (target - row[m])
            if cfg.record_transcript:
                self.transcript.append((state.agent_cells, plan.primitives, reward))
            macro = MacroRecord(key0, selections, plan, [rec], reward, 1, "primitive")
            return macro, nxt, done

        # joint option execution
        oid = plan.option_id
        opt = self.options[oid - N_ACTIONS]
        records: list[StepRecord] = []
        ret = 0.0
        discount = 1.0
        duration = 0
        done = False
        reason = "cap"
        while duration < opt.step_cap:
            key_t = _obs_key(state)
            if cfg.interruption and duration > 0:
                if any(
                    self.controller.row(i, key_t)[oid] < self.controller.value(i, key_t)
                    for i in range(n)
                ):
                    reason = "interrupted"
                    break
            keys = [opt.state_key(i, state, self.spec, self.abstraction) for i in range(n)]
            choices = [opt.greedy_choice(i, keys[i]) for i in range(n)]
            if all(choices[i] == opt.term_index(i) for i in range(n)):
                reason = "term"
                break
            acts = tuple(opt.choice_to_action(i, choices[i]) for i in range(n))
            nxt, reward, _, done = step(state, acts, self.spec)
            self.total_steps += 1
            records.append(StepRecord(key_t, _obs_key(nxt), state, nxt, acts, reward, done))
            if cfg.record_transcript:
                self.transcript.append((state.agent_cells, acts, reward))
            ret += discount * reward
            discount *= cfg.gamma
            duration += 1
            state = nxt
            if done:
                reason = "env_done"
                break

        key_end = _obs_key(state)
        for i in range(n):
            row = self.controller.row(i, key0)
            boot = 0.0 if done else self.controller.value(i, key_end)
            target = ret + discount * boot   # discount == gamma^duration
            row[oid] += cfg.alpha * (target - row[oid])
        if cfg.primitives_on_option_steps and records:
            _primitive_updates(records, self.controller, cfg, n)
        if cfg.intra_option and records:
            intra_option_update(records, self.options, self.option_ids, self.controller,
                                cfg, self.abstraction, self.spec, skip_id=oid)
        macro = MacroRecord(key0, selections, plan, records, ret, duration, reason)
        return macro, state, done

    # -- training & evaluation ---------------------------------------------

    def train(self) -> dict:
        cfg = self.cfg
        next_eval = cfg.eval_every
        while self.total_steps < cfg.steps:
            state = reset(self.spec, seed=int(self.env_rng.integers(2 ** 31)))
            done = False
            while not done and self.total_steps < cfg.steps:
                _, state, done = self.run_macro_step(state)
                if self.total_steps >= next_eval:
                    self._checkpoint(next_eval)
                    next_eval += cfg.eval_every
        if not self.curve or self.curve[-1]["step"] != cfg.steps:
            self._checkpoint(cfg.steps)
        return {
            "curve": self.curve,
            "final_fraction": self.curve[-1]["fraction"],
            "final_return": self.curve[-1]["return"],
        }

    def _checkpoint(self, label: int) -> None:
        frac, ret = self.evaluate(label)
        self.curve.append({"step": int(label), "fraction": frac, "return": ret})

    def evaluate(self, label: int = 0) -> tuple[float, float]:
        """Greedy (eps_eval) policy over fresh episodes; learning frozen."""
        cfg = self.cfg
        rng = stream(self.seed, f"downstream/eval/{label}")
        n = self.spec.n_agents
        n_apples = len(self.spec.apples)
        fractions = []
        returns = []
        for _ in range(cfg.eval_episodes):
            state = reset(self.spec, seed=int(rng.integers(2 ** 31)))
            done = False
            total = 0.0
            while not done:
                key = _obs_key(state)
                selections = tuple(
                    self._select(i, key, cfg.eps_eval, rng) for i in range(n)
                )
                plan = resolve_votes(selections, len(self.options), n_w=n)
                if plan.kind == "primitives":
                    state, r, _, done = step(state, plan.primitives, self.spec)
                    total += r
                else:
                    opt = self.options[plan.option_id - N_ACTIONS]
                    duration = 0
                    while duration < opt.step_cap and not done:
                        keys = [opt.state_key(i, state, self.spec, self.abstraction)
                                for i in range(n)]
                        choices = [opt.greedy_choice(i, keys[i]) for i in range(n)]
                        if all(choices[i] == opt.term_index(i) for i in range(n)):
                            break
                        acts = tuple(opt.choice_to_action(i, choices[i]) for i in range(n))
                        state, r, _, done = step(state, acts, self.spec)
                        total += r
                        duration += 1
            returns.append(total)
            fractions.append(total if n_apples else 0.0)
        return float(np.mean(fractions)), float(np.mean(returns))


def train_downstream(spec: GridSpec, options: list[JointOption], cfg: DownstreamConfig,
                     seed: int, abstraction: Abstraction | None = None):
    """Train one seed; returns (trainer, summary dict with the learning curve)."""
    trainer = DownstreamTrainer(spec, options, cfg, seed, abstraction)
    summary = trainer.train()
    return trainer, summary
