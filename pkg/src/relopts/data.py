"""Transition datasets: collection under a random joint policy and binary IO.

File layout (little-endian), magic "FOPT":

    header:  magic 4s | version u16 | spec_json_len u32 | spec_json bytes
             | transition_count u64
    record:  episode u32 | t u16
             | cur: (x u8, y u8) * N | cur_apples u16 (bitmask)
             | actions: u8 * N
             | next: (x u8, y u8) * N | next_apples u16
             | reward f64 | done u8

Observations are not stored: the observation function is deterministic, so
they are reconstructed from states on demand. Apples are a bitmask over the
spec's apple list (at most 16 apples).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

from .errors import ConfigError
from .grid import GridSpec, JointState, observe, reset, step
from .rng import stream

MAGIC = b"FOPT"
VERSION = 1


@dataclass(frozen=True)
class Transition:
    episode: int
    t: int
    state: JointState
    actions: tuple[int, ...]
    next_state: JointState
    reward: float
    done: bool


@dataclass
class TransitionDataset:
    spec: GridSpec
    transitions: list[Transition]
    seed: int
    policy: str = "random"

    def __len__(self) -> int:
        return len(self.transitions)

    def episodes(self) -> list[list[Transition]]:
        out: dict[int, list[Transition]] = {}
        for tr in self.transitions:
            out.setdefault(tr.episode, []).append(tr)
        return [sorted(v, key=lambda tr: tr.t) for _, v in sorted(out.items())]

    def observations(self, tr: Transition):
        return observe(tr.state, self.spec), observe(tr.next_state, self.spec)


class RandomJointPolicy:
    """Uniform over each agent's legal actions."""

    def __init__(self, spec: GridSpec, seed: int):
        self.spec = spec
        self.rng = stream(seed, "policy/random")

    def act(self, state: JointState) -> tuple[int, ...]:
        return tuple(
            int(self.rng.choice(self.spec.legal_actions(i)))
            for i in range(self.spec.n_agents)
        )


def collect_dataset(spec: GridSpec, policy: RandomJointPolicy, n_transitions: int,
                    seed: int) -> TransitionDataset:
    """Roll episodes until exactly `n_transitions` are recorded."""
    if n_transitions < 1:
        raise ConfigError("n_transitions must be >= 1")
    transitions: list[Transition] = []
    episode = 0
    while len(transitions) < n_transitions:
        state = reset(spec, seed=seed * 1_000_003 + episode)
        t = 0
        done = False
        while not done and len(transitions) < n_transitions:
            actions = policy.act(state)
            nxt, reward, _, done = step(state, actions, spec)
            transitions.append(Transition(episode, t, state, actions, nxt, reward, done))
            state = nxt
            t += 1
        episode += 1
    return TransitionDataset(spec=spec, transitions=transitions, seed=seed, policy="random")


# ---------------------------------------------------------------------------
# binary IO
# ---------------------------------------------------------------------------

def _spec_to_json(spec: GridSpec) -> str:
    return json.dumps(
        {
            "width": spec.width,
            "height": spec.height,
            "n_agents": spec.n_agents,
            "agent_types": list(spec.agent_types),
            "agent_levels": list(spec.agent_levels),
            "apples": [[list(c), l] for c, l in spec.apples],
            "forced_coop": spec.forced_coop,
            "walls": sorted(list(w) for w in spec.walls),
            "horizon": spec.horizon,
            "seed": spec.seed,
        },
        sort_keys=True,
    )


def spec_from_json(text: str) -> GridSpec:
    d = json.loads(text)
    return GridSpec(
        width=d["width"],
        height=d["height"],
        n_agents=d["n_agents"],
        agent_types=tuple(d["agent_types"]),
        agent_levels=tuple(d["agent_levels"]),
        apples=tuple((tuple(c), l) for c, l in d["apples"]),
        forced_coop=d["forced_coop"],
        walls=frozenset(tuple(w) for w in d["walls"]),
        horizon=d["horizon"],
        seed=d["seed"],
    )


def _apples_mask(apples: frozenset[int]) -> int:
    mask = 0
    for i in apples:
        mask |= 1 << i
    return mask


def _mask_apples(mask: int, n: int) -> frozenset[int]:
    return frozenset(i for i in range(n) if mask & (1 << i))


def save_dataset(dataset: TransitionDataset, path: str) -> None:
    spec = dataset.spec
    if len(spec.apples) > 16:
        raise ConfigError("binary format supports at most 16 apples")
    n = spec.n_agents
    spec_json = _spec_to_json(spec).encode()
    rec = struct.Struct(f"<IH{2 * n}BH{n}B{2 * n}BHdB")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(spec_json)))
        fh.write(spec_json)
        fh.write(struct.pack("<Q", len(dataset.transitions)))
        for tr in dataset.transitions:
            cur = [v for cell in tr.state.agent_cells for v in cell]
            nxt = [v for cell in tr.next_state.agent_cells for v in cell]
            fh.write(
                rec.pack(
                    tr.episode,
                    tr.t,
                    *cur,
                    _apples_mask(tr.state.apples_remaining),
                    *tr.actions,
                    *nxt,
                    _apples_mask(tr.next_state.apples_remaining),
                    tr.reward,
                    int(tr.done),
                )
            )


def load_dataset(path: str) -> TransitionDataset:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigError(f"{path}: not a FOPT dataset")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported version {version}")
        (jlen,) = struct.unpack("<I", fh.read(4))
        spec = spec_from_json(fh.read(jlen).decode())
        (count,) = struct.unpack("<Q", fh.read(8))
        n = spec.n_agents
        n_apples = len(spec.apples)
        levels = tuple(spec.agent_levels)
        rec = struct.Struct(f"<IH{2 * n}BH{n}B{2 * n}BHdB")
        transitions = []
        for _ in range(count):
            vals = rec.unpack(fh.read(rec.size))
            episode, t = vals[0], vals[1]
            p = 2
            cur = tuple((vals[p + 2 * i], vals[p + 2 * i + 1]) for i in range(n))
            p += 2 * n
            cur_apples = _mask_apples(vals[p], n_apples)
            p += 1
            actions = tuple(vals[p: p + n])
            p += n
            nxt = tuple((vals[p + 2 * i], vals[p + 2 * i + 1]) for i in range(n))
            p += 2 * n
            nxt_apples = _mask_apples(vals[p], n_apples)
            p += 1
            reward, done = vals[p], bool(vals[p + 1])
            transitions.append(
                Transition(
                    episode,
                    t,
                    JointState(cur, levels, cur_apples, t),
                    actions,
                    JointState(nxt, levels, nxt_apples, t + 1),
                    reward,
                    done,
                )
            )
    return TransitionDataset(spec=spec, transitions=transitions, seed=spec.seed)


def replay_check(dataset: TransitionDataset) -> bool:
    """Re-run step() on every stored transition; True iff all reproduce."""
    for tr in dataset.transitions:
        nxt, reward, _, done = step(tr.state, tr.actions, dataset.spec)
        if (
            nxt.agent_cells != tr.next_state.agent_cells
            or nxt.apples_remaining != tr.next_state.apples_remaining
            or abs(reward - tr.reward) > 1e-12
            or done != tr.done
        ):
            return False
    return True
