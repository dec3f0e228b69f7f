"""Pairwise single-agent state distances.

Two routes that must stay independent:

* `ExactDistanceTable` - all-pairs BFS step counts on the single-agent
  movement graph. The oracle side of every distance check.
* `LearnedDistance` - a contrastive multi-output estimator. Each state is
  encoded once; the distance between two encodings is computed per feature as
  an asymmetric max-ReLU part plus a symmetric Euclidean part, so every
  component is non-negative by construction and the whole map is a quasimetric
  (no symmetry is asserted, callers keep the goal state as the second
  argument). A learned non-negative linear projection turns the component
  vector into the scalar used by the contrastive objective.

Training pairs current and future states of the same agent (geometric
horizon) against in-batch negatives with a symmetrised InfoNCE loss. In
heterogeneous mode the encoder also receives the source agent's type, and the
features a source type does not own are re-randomized in the goal states so
the learned map becomes conditionally invariant to them.

After training, each component is rescaled by a least-squares fit against the
corresponding |feature delta| over same-agent pairs, putting every channel in
grid units: the downstream quantization grain of 1.0 then means one cell.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import cmi
from .data import TransitionDataset
from .errors import MetricError, NumericsError, StateError
from .grid import (
    N_FEATURES, TYPE_FEATURES, TYPE_FULL, GridSpec, factorize, single_agent_adjacency,
)
from .nets import Adam, Mlp, accumulate, mlp_grads_to_list
from .rng import stream

_EPS_NORM = 1e-12


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------

@dataclass
class ExactDistanceTable:
    cells: list[tuple[int, int]]
    index: dict[tuple[int, int], int]
    steps: np.ndarray  # (n, n) float64, BFS step counts

    def distance(self, a: tuple[int, int], b: tuple[int, int]) -> float:
        return float(self.steps[self.index[a], self.index[b]])


def build_exact_table(spec: GridSpec, agent_type: int = TYPE_FULL) -> ExactDistanceTable:
    cells, adj = single_agent_adjacency(spec, agent_type)
    n = len(cells)
    neighbors = [np.nonzero(adj[i])[0] for i in range(n)]
    steps = np.full((n, n), np.inf)
    for src in range(n):
        steps[src, src] = 0.0
        q = deque([src])
        while q:
            u = q.popleft()
            for v in neighbors[u]:
                if steps[src, v] == np.inf:
                    steps[src, v] = steps[src, u] + 1.0
                    q.append(int(v))
    if np.isinf(steps).any():
        raise MetricError("single-agent movement graph is disconnected")
    return ExactDistanceTable(cells=cells, index={c: i for i, c in enumerate(cells)}, steps=steps)


# ---------------------------------------------------------------------------
# learned distance
# ---------------------------------------------------------------------------

@dataclass
class CmiConfig:
    weight: float = 0.003
    k: int = 15
    lr: float = 3e-4
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    batch: int = 128
    every: int = 1


@dataclass
class MetricConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    embed_dim: int = 4           # per feature, per half
    lr: float = 1e-3
    batch: int = 256
    steps: int = 3000
    horizon_mean: float = 10.0
    temperature: float = 1.0
    cmi: CmiConfig = field(default_factory=CmiConfig)
    cmi_enabled: bool = True
    calibration_pairs: int = 4096


class LearnedDistance:
    """Multi-output quasimetric over the unified single-agent feature space."""

    def __init__(self, enc: Mlp, proj_v: np.ndarray, n_features: int, embed_dim: int,
                 hetero: bool, n_types: int):
        self.enc = enc
        self.proj_v = proj_v
        self.n_features = n_features
        self.embed_dim = embed_dim
        self.hetero = hetero
        self.n_types = n_types
        self.calibration = np.ones(n_features)
        self.channel_bias = np.zeros(n_features)
        self.trained = False

    # -- encoding ------------------------------------------------------------

    def _inputs(self, states: np.ndarray, types: np.ndarray | None) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if not self.hetero:
            return states
        onehot = np.zeros((len(states), self.n_types))
        onehot[np.arange(len(states)), np.asarray(types, dtype=int)] = 1.0
        return np.concatenate([states, onehot], axis=1)

    def encode(self, states: np.ndarray, types=None) -> np.ndarray:
        out = self.enc.forward(self._inputs(states, types))
        return out.reshape(len(states), self.n_features, 2, self.embed_dim)

    def encode_tape(self, states: np.ndarray, types=None):
        out, tape = self.enc.forward_tape(self._inputs(states, types))
        return out.reshape(len(states), self.n_features, 2, self.embed_dim), tape

    def weights(self) -> np.ndarray:
        return np.log1p(np.exp(self.proj_v))  # softplus, >= 0

    # -- evaluation ----------------------------------------------------------

    def components_batch(self, sources: np.ndarray, goals: np.ndarray,
                         types=None, calibrated: bool = True) -> np.ndarray:
        """Per-feature non-negative components for matched (source, goal) rows.

        Calibration is affine with a floor: the fitted zero-delta bias is
        removed before scaling, clamped at zero so components stay
        non-negative and exact-zero pairs read zero.
        """
        xe = self.encode(sources, types)
        ge = self.encode(goals, types)
        comp, _ = head_matched(xe, ge)
        if calibrated:
            comp = np.maximum(comp - self.channel_bias, 0.0) * self.calibration
        return comp

    def per_feature(self, source, goal, agent_type: int = TYPE_FULL) -> np.ndarray:
        """Calibrated components for one (source, goal) pair; goal stays second."""
        if not self.trained:
            raise StateError("learned distance is not trained")
        t = np.array([agent_type])
        return self.components_batch(np.asarray(source, dtype=np.float64)[None, :],
                                     np.asarray(goal, dtype=np.float64)[None, :], t)[0]

    def scalar_batch(self, sources: np.ndarray, goals: np.ndarray, types=None) -> np.ndarray:
        """Projected scalar distance (the contrastive head's output)."""
        comp = self.components_batch(sources, goals, types, calibrated=False)
        return comp @ self.weights()

    def scalar(self, source, goal, agent_type: int = TYPE_FULL) -> float:
        if not self.trained:
            raise StateError("learned distance is not trained")
        t = np.array([agent_type])
        return float(self.scalar_batch(np.asarray(source, dtype=np.float64)[None, :],
                                       np.asarray(goal, dtype=np.float64)[None, :], t)[0])


    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        from .nets import serialize_mlp
        return {
            "enc": serialize_mlp(self.enc),
            "proj_v": self.proj_v.tolist(),
            "calibration": self.calibration.tolist(),
            "channel_bias": self.channel_bias.tolist(),
            "n_features": self.n_features,
            "embed_dim": self.embed_dim,
            "hetero": self.hetero,
            "n_types": self.n_types,
            "trained": self.trained,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LearnedDistance":
        from .nets import deserialize_mlp
        d = cls(deserialize_mlp(obj["enc"]), np.asarray(obj["proj_v"], dtype=np.float64),
                obj["n_features"], obj["embed_dim"], obj["hetero"], obj["n_types"])
        d.calibration = np.asarray(obj["calibration"], dtype=np.float64)
        d.channel_bias = np.asarray(obj["channel_bias"], dtype=np.float64)
        d.trained = obj["trained"]
        return d


def per_feature_distance(d: LearnedDistance, source, goal, agent_type: int = TYPE_FULL) -> np.ndarray:
    return d.per_feature(source, goal, agent_type)


# ---------------------------------------------------------------------------
# distance head (shared by training and evaluation)
# ---------------------------------------------------------------------------

def head_matched(xe: np.ndarray, ge: np.ndarray):
    """Components for aligned rows: (M, F, 2, E) x2 -> (M, F).

    component_f = max_e relu(h_f(x)_e - h_f(g)_e) + ||g_f(x) - g_f(g)||.
    """
    dh = xe[:, :, 0, :] - ge[:, :, 0, :]          # (M, F, E)
    relu_h = np.maximum(dh, 0.0)
    asym = relu_h.max(axis=-1)                     # (M, F)
    amax = relu_h.argmax(axis=-1)
    dg = xe[:, :, 1, :] - ge[:, :, 1, :]
    sym = np.sqrt((dg * dg).sum(axis=-1) + _EPS_NORM)
    cache = (relu_h, amax, dg, sym, xe.shape)
    return asym + sym, cache


def head_matched_backward(cache, dcomp: np.ndarray):
    """Gradient of components w.r.t. both encodings; returns (dXe, dGe)."""
    relu_h, amax, dg, sym, shape = cache
    m, f, _, e = shape
    d_xe = np.zeros(shape)
    d_ge = np.zeros(shape)
    active = relu_h.max(axis=-1) > 0.0             # (M, F)
    onehot = np.zeros((m, f, e))
    mi, fi = np.nonzero(active)
    onehot[mi, fi, amax[mi, fi]] = 1.0
    d_h = dcomp[:, :, None] * onehot
    d_xe[:, :, 0, :] = d_h
    d_ge[:, :, 0, :] = -d_h
    d_g = dcomp[:, :, None] * dg / sym[:, :, None]
    d_xe[:, :, 1, :] = d_g
    d_ge[:, :, 1, :] = -d_g
    return d_xe, d_ge


def head_pairwise(xe: np.ndarray, ge: np.ndarray):
    """Components for all (source row, goal row) pairs: -> (A, B, F)."""
    dh = xe[:, None, :, 0, :] - ge[None, :, :, 0, :]   # (A, B, F, E)
    relu_h = np.maximum(dh, 0.0)
    asym = relu_h.max(axis=-1)
    amax = relu_h.argmax(axis=-1)
    dg = xe[:, None, :, 1, :] - ge[None, :, :, 1, :]
    sym = np.sqrt((dg * dg).sum(axis=-1) + _EPS_NORM)
    cache = (relu_h, amax, dg, sym, xe.shape, ge.shape)
    return asym + sym, cache


def head_pairwise_backward(cache, dcomp: np.ndarray):
    relu_h, amax, dg, sym, xshape, gshape = cache
    a, b = dcomp.shape[0], dcomp.shape[1]
    f, e = xshape[1], xshape[3]
    active = relu_h.max(axis=-1) > 0.0                 # (A, B, F)
    onehot = np.zeros((a, b, f, e))
    ai, bi, fi = np.nonzero(active)
    onehot[ai, bi, fi, amax[ai, bi, fi]] = 1.0
    d_h = dcomp[:, :, :, None] * onehot                # (A, B, F, E)
    d_g = dcomp[:, :, :, None] * dg / sym[:, :, :, None]
    d_xe = np.zeros(xshape)
    d_ge = np.zeros(gshape)
    d_xe[:, :, 0, :] = d_h.sum(axis=1)
    d_ge[:, :, 0, :] = -d_h.sum(axis=0)
    d_xe[:, :, 1, :] = d_g.sum(axis=1)
    d_ge[:, :, 1, :] = -d_g.sum(axis=0)
    return d_xe, d_ge


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class _EpisodeArrays:
    """Factored per-episode state tensors for fast pair sampling."""

    def __init__(self, dataset: TransitionDataset):
        spec = dataset.spec
        self.spec = spec
        self.types = np.array(spec.agent_types, dtype=int)
        self.seqs: list[np.ndarray] = []
        for ep in dataset.episodes():
            states = [factorize(tr.state, spec) for tr in ep]
            states.append(factorize(ep[-1].next_state, spec))
            self.seqs.append(np.asarray(states, dtype=np.float64))  # (L+1, N, F)
        self.n_agents = spec.n_agents
        self.lengths = np.array([len(s) for s in self.seqs])

    def sample_future_pairs(self, n: int, horizon_mean: float, rng: np.random.Generator):
        """(anchor, future-of-same-agent, type) triples with geometric gaps."""
        eps = rng.integers(0, len(self.seqs), size=n)
        anchors = np.empty((n, N_FEATURES))
        goals = np.empty((n, N_FEATURES))
        types = np.empty(n, dtype=int)
        gaps = rng.geometric(1.0 / horizon_mean, size=n)
        agents = rng.integers(0, self.n_agents, size=n)
        for r in range(n):
            seq = self.seqs[eps[r]]
            t = int(rng.integers(0, len(seq) - 1))
            t2 = min(t + int(gaps[r]), len(seq) - 1)
            anchors[r] = seq[t, agents[r]]
            goals[r] = seq[t2, agents[r]]
            types[r] = self.types[agents[r]]
        return anchors, goals, types

    def sample_same_agent_pairs(self, n: int, rng: np.random.Generator):
        """(state, other-time state of same agent) pairs, any gap."""
        eps = rng.integers(0, len(self.seqs), size=n)
        a = np.empty((n, N_FEATURES))
        b = np.empty((n, N_FEATURES))
        types = np.empty(n, dtype=int)
        agents = rng.integers(0, self.n_agents, size=n)
        for r in range(n):
            seq = self.seqs[eps[r]]
            t1 = int(rng.integers(0, len(seq)))
            t2 = int(rng.integers(0, len(seq)))
            a[r] = seq[t1, agents[r]]
            b[r] = seq[t2, agents[r]]
            types[r] = self.types[agents[r]]
        return a, b, types

    def sample_cross_agent_pairs(self, n: int, rng: np.random.Generator):
        """Same-timestep pairs of two distinct agents: (B, 2, F) plus types."""
        eps = rng.integers(0, len(self.seqs), size=n)
        out = np.empty((n, 2, N_FEATURES))
        types = np.empty((n, 2), dtype=int)
        for r in range(n):
            seq = self.seqs[eps[r]]
            t = int(rng.integers(0, len(seq)))
            i, j = rng.choice(self.n_agents, size=2, replace=False)
            i, j = int(min(i, j)), int(max(i, j))
            out[r, 0] = seq[t, i]
            out[r, 1] = seq[t, j]
            types[r] = (self.types[i], self.types[j])
        return out, types

    def feature_pool(self, f: int) -> np.ndarray:
        """All observed values of feature f from agents whose type owns it."""
        vals = []
        for seq in self.seqs:
            for i in range(self.n_agents):
                if TYPE_FEATURES[self.types[i]][f]:
                    vals.append(seq[:, i, f])
        if not vals:
            return np.zeros(1)
        return np.concatenate(vals)


def _scramble_goals(goals: np.ndarray, anchor_type: int, pools: list[np.ndarray],
                    rng: np.random.Generator) -> np.ndarray:
    """Replace goal features the source type does not own with pool samples."""
    out = goals.copy()
    mask = TYPE_FEATURES[anchor_type]
    for f in range(goals.shape[1]):
        if not mask[f]:
            out[:, f] = pools[f][rng.integers(0, len(pools[f]), size=len(goals))]
    return out


def train_learned_distance(dataset: TransitionDataset, cfg: MetricConfig,
                           seed: int = 0) -> LearnedDistance:
    """Contrastive training with optional CMI disentanglement penalty."""
    if len(dataset) == 0:
        raise MetricError("empty dataset")
    arrays = _EpisodeArrays(dataset)
    spec = dataset.spec
    hetero = len(set(spec.agent_types)) > 1
    n_types = max(TYPE_FEATURES) + 1
    in_dim = N_FEATURES + (n_types if hetero else 0)
    out_dim = 2 * N_FEATURES * cfg.embed_dim

    rng = stream(seed, "metric/train")
    enc = Mlp([in_dim] + list(cfg.hidden) + [out_dim], rng)
    proj_v = np.full(N_FEATURES, np.log(np.e - 1.0))  # softplus^-1(1)
    dist = LearnedDistance(enc, proj_v, N_FEATURES, cfg.embed_dim, hetero, n_types)

    opt = Adam(enc.params() + [proj_v], lr=cfg.lr)
    disc = cmi.Discriminator(N_FEATURES, cfg.cmi.hidden, cfg.cmi.lr,
                             stream(seed, "metric/cmi")) if cfg.cmi_enabled else None
    pools = [arrays.feature_pool(f) for f in range(N_FEATURES)]
    present_types = sorted(set(spec.agent_types))

    for step_i in range(cfg.steps):
        anchors, goals, types = arrays.sample_future_pairs(cfg.batch, cfg.horizon_mean, rng)
        if hetero:
            goals_by_type = {t: _scramble_goals(goals, t, pools, rng) for t in present_types}
        else:
            goals_by_type = {TYPE_FULL: goals}

        w = dist.weights()
        b = cfg.batch
        logits = np.zeros((b, b))
        comp_by_type = {}
        xe, x_tape = dist.encode_tape(anchors, types)
        ge_by_type = {}
        for t in present_types:
            ge_by_type[t] = dist.encode_tape(goals_by_type[t], np.full(b, t))
        for t in present_types:
            rows = np.nonzero(types == t)[0]
            if len(rows) == 0:
                continue
            comp, cache = head_pairwise(xe[rows], ge_by_type[t][0])
            comp_by_type[t] = (rows, comp, cache)
            logits[rows, :] = -(comp @ w) / cfg.temperature

        # symmetrised InfoNCE
        row_max = logits.max(axis=1, keepdims=True)
        exp_r = np.exp(logits - row_max)
        softmax_r = exp_r / exp_r.sum(axis=1, keepdims=True)
        col_max = logits.max(axis=0, keepdims=True)
        exp_c = np.exp(logits - col_max)
        softmax_c = exp_c / exp_c.sum(axis=0, keepdims=True)
        diag = np.arange(b)
        loss = -0.5 * (
            np.mean(logits[diag, diag] - row_max[:, 0] - np.log(exp_r.sum(axis=1)))
            + np.mean(logits[diag, diag] - col_max[0, :] - np.log(exp_c.sum(axis=0)))
        )
        if not np.isfinite(loss):
            raise NumericsError("contrastive loss is not finite")

        d_logits = -0.5 / b * ((np.eye(b) - softmax_r) + (np.eye(b) - softmax_c))
        d_scal = d_logits * (-1.0 / cfg.temperature)   # (B, B)

        enc_grads = None
        d_xe_total = np.zeros_like(xe)
        d_v = np.zeros_like(proj_v)
        for t, (rows, comp, cache) in comp_by_type.items():
            d_comp = d_scal[rows, :][:, :, None] * w[None, None, :]
            d_v += (d_scal[rows, :][:, :, None] * comp).sum(axis=(0, 1))
            d_xe_rows, d_ge = head_pairwise_backward(cache, d_comp)
            d_xe_total[rows] += d_xe_rows
            g_grads, _ = ge_by_type[t][1].backward(d_ge.reshape(b, -1))
            enc_grads = accumulate(enc_grads, mlp_grads_to_list(enc, g_grads))
        d_v *= _sigmoid(proj_v)  # softplus chain
        x_grads, _ = x_tape.backward(d_xe_total.reshape(b, -1))
        enc_grads = accumulate(enc_grads, mlp_grads_to_list(enc, x_grads))

        # CMI penalty on cross-agent pairs
        if disc is not None and step_i % cfg.cmi.every == 0 and cfg.cmi.weight > 0.0:
            pairs, pair_types = arrays.sample_cross_agent_pairs(cfg.cmi.batch, rng)
            src_e, src_tape = dist.encode_tape(pairs[:, 0], pair_types[:, 0])
            dst_e, dst_tape = dist.encode_tape(pairs[:, 1], pair_types[:, 0])
            z, z_cache = head_matched(src_e, dst_e)
            try:
                cmi.discriminator_step(disc, pairs, z, cfg.cmi.k, rng)
                dz = cmi.penalty_grad_z(disc, pairs, z) * cfg.cmi.weight
                d_src, d_dst = head_matched_backward(z_cache, dz)
                s_grads, _ = src_tape.backward(d_src.reshape(len(pairs), -1))
                t_grads, _ = dst_tape.backward(d_dst.reshape(len(pairs), -1))
                enc_grads = accumulate(enc_grads, mlp_grads_to_list(enc, s_grads))
                enc_grads = accumulate(enc_grads, mlp_grads_to_list(enc, t_grads))
            except cmi.SkipBatch:
                pass

        opt.step(enc_grads + [d_v])

    _calibrate(dist, arrays, cfg, stream(seed, "metric/calibrate"))
    dist.trained = True
    return dist


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _calibrate(dist: LearnedDistance, arrays: _EpisodeArrays, cfg: MetricConfig,
               rng: np.random.Generator) -> None:
    """Affine per-channel fit on same-agent pairs: the channel's mean value at
    zero feature delta becomes its bias, then a linear scale maps the debiased
    channel to |feature delta| (grid units)."""
    a, b, types = arrays.sample_same_agent_pairs(cfg.calibration_pairs, rng)
    comp = dist.components_batch(a, b, types, calibrated=False)   # (M, F)
    owns = np.array([[TYPE_FEATURES[t][f] for f in range(N_FEATURES)] for t in types])
    target = np.abs(a - b)
    scale = np.ones(N_FEATURES)
    bias = np.zeros(N_FEATURES)
    for f in range(N_FEATURES):
        m = owns[:, f]
        zero = m & (target[:, f] < 0.5)
        if zero.any():
            bias[f] = float(comp[zero, f].mean())
        moved = m & (target[:, f] >= 0.5)
        z = np.maximum(comp[moved, f] - bias[f], 0.0)
        zz = float((z ** 2).sum())
        if zz > 1e-9:
            scale[f] = float((z * target[moved, f]).sum() / zz)
    dist.calibration = scale
    dist.channel_bias = bias
