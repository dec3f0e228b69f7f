"""Fermat-state estimation and the relative joint-state representation.

`fermat_exact` is the brute-force oracle: the single-agent state minimizing
the summed exact distance to every agent, ties broken by the lexicographically
smallest cell. The learned counterpart is an encoder mapping the flattened
factored joint state to a continuous point in the unified feature space,
trained to minimize the mean distance from each agent to its output (the
distance net is frozen; only input gradients flow through it). Training
batches are agent-permutation augmented so the encoder approximates a
symmetric function of the team.

The relative representation of a joint state is the per-feature sum of
calibrated distance components from each agent to the encoded Fermat point,
plus its integer quantization (grain q, default one grid unit). A scalar mode
collapses the representation to the summed channel total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, StateError
from .grid import N_FEATURES, GridSpec, factorize
from .metric import ExactDistanceTable, LearnedDistance, head_matched, head_matched_backward
from .nets import Adam, Mlp, accumulate, mlp_grads_to_list
from .rng import stream


def fermat_exact(factored, table: ExactDistanceTable) -> tuple[tuple[int, int], float]:
    """Brute-force Fermat cell and distance for homogeneous integer states.

    Scans every cell; `table.cells` is in lexicographic order and argmin takes
    the first minimum, which realizes the lexicographic tie-break.
    """
    rows = [table.index[(int(round(s[0])), int(round(s[1])))] for s in factored]
    totals = table.steps[rows].sum(axis=0)
    best = int(np.argmin(totals))
    return table.cells[best], float(totals[best])


@dataclass(frozen=True)
class RelativeRepresentation:
    values: tuple[float, ...]
    quantized: tuple[int, ...]

    def node_key(self) -> tuple[int, ...]:
        return self.quantized


@dataclass
class FermatConfig:
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    lr: float = 1e-3
    batch: int = 256
    steps: int = 6000
    power: float = 1.0        # objective exponent on the per-agent distance
    permute: bool = True      # agent-order augmentation
    aligned_frac: float = 0.10   # synthetic aligned / axis-aligned rows per batch
    synthetic_frac: float = 0.25  # uniform-random synthetic team rows per batch
    fine_tune_frac: float = 0.3  # tail fraction of steps at lr/5


class FermatEncoder:
    """Joint state -> point in the unified single-agent feature space."""

    def __init__(self, net: Mlp, n_agents: int, agent_types: tuple[int, ...], hetero: bool,
                 n_types: int):
        self.net = net
        self.n_agents = n_agents
        self.agent_types = agent_types
        self.hetero = hetero
        self.n_types = n_types
        self.trained = False

    def _inputs(self, states: np.ndarray, order: np.ndarray | None = None) -> np.ndarray:
        """states: (B, N, F) -> flattened net input, optionally agent-permuted."""
        b, n, f = states.shape
        types = np.tile(np.asarray(self.agent_types, dtype=int), (b, 1))
        if order is not None:
            states = np.take_along_axis(states, order[:, :, None], axis=1)
            types = np.take_along_axis(types, order, axis=1)
        if not self.hetero:
            return states.reshape(b, n * f)
        onehot = np.zeros((b, n, self.n_types))
        bi, ni = np.meshgrid(np.arange(b), np.arange(n), indexing="ij")
        onehot[bi, ni, types] = 1.0
        return np.concatenate([states, onehot], axis=2).reshape(b, n * (f + self.n_types))

    def encode(self, states: np.ndarray) -> np.ndarray:
        """Symmetrized output: mean over agent orderings (exact for N <= 4)."""
        single = states.ndim == 2
        if single:
            states = states[None]
        orders = self._eval_orders()
        total = np.zeros((len(states), states.shape[2]))
        for order in orders:
            o = np.tile(order, (len(states), 1))
            total += self.net.forward(self._inputs(states, o))
        out = total / len(orders)
        return out[0] if single else out

    def _eval_orders(self) -> list[np.ndarray]:
        if self.n_agents <= 4:
            from itertools import permutations
            return [np.array(p) for p in permutations(range(self.n_agents))]
        # cycle rotations keep the cost linear for larger teams
        idx = np.arange(self.n_agents)
        return [np.roll(idx, r) for r in range(self.n_agents)]

    def to_dict(self) -> dict:
        from .nets import serialize_mlp
        return {
            "net": serialize_mlp(self.net),
            "n_agents": self.n_agents,
            "agent_types": list(self.agent_types),
            "hetero": self.hetero,
            "n_types": self.n_types,
            "trained": self.trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FermatEncoder":
        from .nets import deserialize_mlp
        enc = cls(deserialize_mlp(obj["net"]), obj["n_agents"], tuple(obj["agent_types"]),
                  obj["hetero"], obj["n_types"])
        enc.trained = obj["trained"]
        return enc

    def encode_tape(self, states: np.ndarray, order: np.ndarray | None = None):
        return self.net.forward_tape(self._inputs(states, order))


def train_fermat_encoder(dataset, dist: LearnedDistance, cfg: FermatConfig,
                         seed: int = 0) -> FermatEncoder:
    """Minimize the mean per-agent distance to the encoded point (Fermat loss).

    The distance estimator is frozen: its parameters receive no update;
    gradients flow only through its inputs into the encoder.
    """
    if not dist.trained:
        raise StateError("distance must be trained before the Fermat encoder")
    spec: GridSpec = dataset.spec
    n = spec.n_agents
    states = np.asarray(
        [factorize(tr.state, spec) for tr in dataset.transitions], dtype=np.float64
    )  # (M, N, F)
    hetero = dist.hetero
    in_dim = n * (N_FEATURES + (dist.n_types if hetero else 0))
    rng = stream(seed, "fermat/train")
    net = Mlp([in_dim] + list(cfg.hidden) + [N_FEATURES], rng)
    enc = FermatEncoder(net, n, tuple(spec.agent_types), hetero, dist.n_types)
    opt = Adam(net.params(), lr=cfg.lr)
    cal = dist.calibration
    agent_types = np.asarray(spec.agent_types, dtype=int)
    all_single = states.reshape(-1, N_FEATURES)
    switch = int(cfg.steps * (1.0 - cfg.fine_tune_frac))

    from .grid import TYPE_FEATURES
    type_mask = np.asarray([TYPE_FEATURES[t] for t in spec.agent_types], dtype=float)
    lo = all_single.min(axis=0)
    hi = all_single.max(axis=0)

    for step_i in range(cfg.steps):
        if step_i == switch:
            opt.lr = cfg.lr / 5.0
        rows = rng.integers(0, len(states), size=cfg.batch)
        batch = states[rows]                                   # (B, N, F)
        # the loss is self-supervised, so synthetic team layouts are valid
        # training inputs; they cover regions the random walk rarely reaches
        # (full alignment, one-axis alignment, extreme spreads)
        cursor = 0
        if cfg.aligned_frac > 0.0:
            n_al = max(2, int(cfg.batch * cfg.aligned_frac))
            picks = all_single[rng.integers(0, len(all_single), size=n_al)]
            batch[:n_al] = picks[:, None, :]
            # half keep one random feature aligned and scatter the rest
            n_axis = n_al // 2
            f_pick = rng.integers(0, N_FEATURES, size=n_axis)
            scatter = lo + rng.random((n_axis, n, N_FEATURES)) * (hi - lo)
            for r in range(n_axis):
                scatter[r, :, f_pick[r]] = batch[r, 0, f_pick[r]]
            batch[:n_axis] = scatter
            cursor = n_al
        if cfg.synthetic_frac > 0.0:
            n_sy = int(cfg.batch * cfg.synthetic_frac)
            batch[cursor: cursor + n_sy] = (
                lo + rng.random((n_sy, n, N_FEATURES)) * (hi - lo)
            )
            cursor += n_sy
        if hetero and cursor:
            batch[:cursor] *= type_mask[None, :, :]
        order = None
        if cfg.permute:
            order = np.argsort(rng.random((cfg.batch, n)), axis=1)
            batch_view = np.take_along_axis(batch, order[:, :, None], axis=1)
            types_view = np.take_along_axis(np.tile(agent_types, (cfg.batch, 1)), order, axis=1)
        else:
            batch_view = batch
            types_view = np.tile(agent_types, (cfg.batch, 1))

        goals, phi_tape = enc.encode_tape(batch, order)        # (B, F)

        src = batch_view.reshape(cfg.batch * n, N_FEATURES)
        src_types = types_view.reshape(-1)
        gl = np.repeat(goals, n, axis=0)
        src_e = dist.encode(src, src_types)
        gl_e, gl_tape = dist.encode_tape(gl, src_types)
        comp, cache = head_matched(src_e, gl_e)                # (B*N, F)
        scal = comp @ cal                                      # per-agent scalar
        loss = float(np.mean(scal ** cfg.power))
        if not np.isfinite(loss):
            raise NumericsError("fermat loss is not finite")

        d_scal = cfg.power * scal ** (cfg.power - 1.0) / len(scal)
        d_comp = d_scal[:, None] * cal[None, :]
        _, d_gl_e = head_matched_backward(cache, d_comp)
        d_gl_in = gl_tape.backward_input(d_gl_e.reshape(len(src), -1))
        d_goals = d_gl_in[:, :N_FEATURES].reshape(cfg.batch, n, N_FEATURES).sum(axis=1)
        grads, _ = phi_tape.backward(d_goals)
        opt.step(mlp_grads_to_list(net, grads))

    enc.trained = True
    return enc


def relative_representation(factored, phi: FermatEncoder, dist: LearnedDistance,
                            q: float = 1.0, scalar_mode: bool = False) -> RelativeRepresentation:
    """Per-feature summed agent-to-Fermat distances (Fermat point second arg)."""
    fs = np.asarray(factored, dtype=np.float64)
    values = rep_values(fs[None], phi, dist)[0]
    if scalar_mode:
        values = np.array([values.sum()])
    quant = np.rint(values / q).astype(int)
    return RelativeRepresentation(tuple(float(v) for v in values), tuple(int(v) for v in quant))


def rep_values(states: np.ndarray, phi: FermatEncoder, dist: LearnedDistance) -> np.ndarray:
    """Batch relative representations: (M, N, F) -> (M, F) calibrated sums."""
    if not phi.trained:
        raise StateError("fermat encoder is not trained")
    m, n, f = states.shape
    goals = phi.encode(states)                       # (M, F)
    src = states.reshape(m * n, f)
    types = np.tile(np.asarray(phi.agent_types, dtype=int), m)
    comp = dist.components_batch(src, np.repeat(goals, n, axis=0), types)
    return comp.reshape(m, n, f).sum(axis=1)


def dump_representations(path: str, keys, values: np.ndarray, quantized: np.ndarray) -> None:
    """Audit CSV: one row per joint state (id, raw channels, quantized channels)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        f = values.shape[1]
        writer.writerow(["joint_state_id"]
                        + [f"value_{i}" for i in range(f)]
                        + [f"quantized_{i}" for i in range(f)])
        for k, v, z in zip(keys, values, quantized):
            writer.writerow([k] + [f"{x:.6f}" for x in v] + [int(x) for x in z])
