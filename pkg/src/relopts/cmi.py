"""Conditional-mutual-information machinery.

A single discriminator (shared across features, feature index one-hot
appended) scores triplets (other-feature pair block, feature pair, channel
value). Real triplets come from same-timestep states of two distinct agents;
fakes replace the other-feature block with that of a k-nearest neighbour in
(feature pair, channel value) space. The discriminator is trained with
standard binary cross-entropy (real=1, fake=0), so an untrained net sits at
2 ln 2. The adversarial penalty handed back to the distance trainer is
sum log(1 - sigma(D(real))): certainty that triplets are real drives it to
-inf, and the trainer charges the encoder its negation, so leaking
other-feature information is punished.

`verify_mi_bound` checks the information inequality
I(A;Z) <= I(A;B) + I(A;Z|B) exactly on finite discrete distributions.
"""

from __future__ import annotations

import numpy as np

from .data import TransitionDataset
from .errors import DistError, SkipBatch
from .grid import factorize
from .nets import Adam, Mlp, mlp_grads_to_list


def make_pairs(dataset: TransitionDataset, max_transitions: int | None = None):
    """All unordered agent pairs per timestep: (M, 2, F) states and (M, 2) types."""
    spec = dataset.spec
    n = spec.n_agents
    pairs = []
    types = []
    trs = dataset.transitions if max_transitions is None else dataset.transitions[:max_transitions]
    for tr in trs:
        fs = factorize(tr.state, spec)
        for i in range(n):
            for j in range(i + 1, n):
                pairs.append((fs[i], fs[j]))
                types.append((spec.agent_types[i], spec.agent_types[j]))
    return np.asarray(pairs, dtype=np.float64), np.asarray(types, dtype=int)


class Discriminator:
    """Shared triplet scorer; input is [masked pair block, feature pair, z_f, onehot f]."""

    def __init__(self, n_features: int, hidden: list[int], lr: float,
                 rng: np.random.Generator):
        self.n_features = n_features
        self.in_dim = 2 * n_features + 2 + 1 + n_features
        self.net = Mlp([self.in_dim] + list(hidden) + [1], rng)
        self.opt = Adam(self.net.params(), lr=lr)

    def inputs(self, s_pairs: np.ndarray, z: np.ndarray, f: int,
               minus_block: np.ndarray | None = None) -> np.ndarray:
        b = len(s_pairs)
        flat = s_pairs.reshape(b, -1).copy()          # [agent-i features, agent-j features]
        flat[:, f] = 0.0
        flat[:, self.n_features + f] = 0.0
        if minus_block is not None:
            flat = minus_block
        onehot = np.zeros((b, self.n_features))
        onehot[:, f] = 1.0
        return np.concatenate([flat, s_pairs[:, :, f], z[:, f: f + 1], onehot], axis=1)

    def masked_block(self, s_pairs: np.ndarray, f: int) -> np.ndarray:
        b = len(s_pairs)
        flat = s_pairs.reshape(b, -1).copy()
        flat[:, f] = 0.0
        flat[:, self.n_features + f] = 0.0
        return flat

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)[:, 0]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _knn_choice(s_pairs: np.ndarray, z: np.ndarray, f: int, k: int,
                rng: np.random.Generator) -> np.ndarray:
    """For each row, a uniformly drawn index among its k nearest neighbours
    in (feature pair, channel value) space (self excluded)."""
    c = np.concatenate([s_pairs[:, :, f], z[:, f: f + 1]], axis=1)   # (B, 3)
    b = len(c)
    d2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    kk = min(k, b - 1)
    nn = np.argpartition(d2, kk - 1, axis=1)[:, :kk]                  # (B, kk)
    picks = rng.integers(0, kk, size=b)
    return nn[np.arange(b), picks]


def build_permutation_batch(disc: Discriminator, s_pairs: np.ndarray, z: np.ndarray,
                            f: int, k: int, rng: np.random.Generator):
    """(real inputs, fake inputs) for feature f."""
    real = disc.inputs(s_pairs, z, f)
    neighbor = _knn_choice(s_pairs, z, f, k, rng)
    fake_block = disc.masked_block(s_pairs, f)[neighbor]
    fake = disc.inputs(s_pairs, z, f, minus_block=fake_block)
    return real, fake


def discriminator_step(disc: Discriminator, s_pairs: np.ndarray, z: np.ndarray,
                       k: int, rng: np.random.Generator) -> float:
    """One BCE update over all features; returns the loss before the update."""
    flat = np.concatenate([s_pairs.reshape(len(s_pairs), -1), z], axis=1)
    if len(s_pairs) < 2 or np.allclose(flat, flat[0]):
        raise SkipBatch("degenerate CMI batch")
    reals, fakes = [], []
    for f in range(disc.n_features):
        r, fk = build_permutation_batch(disc, s_pairs, z, f, k, rng)
        reals.append(r)
        fakes.append(fk)
    x = np.concatenate(reals + fakes, axis=0)
    m = len(x) // 2
    logit, tape = disc.net.forward_tape(x)
    logit = logit[:, 0]
    sig = _sigmoid(logit)
    # BCE, real=1 / fake=0, each term averaged over its half
    loss = float(-np.mean(np.log(np.maximum(sig[:m], 1e-300)))
                 - np.mean(np.log(np.maximum(1.0 - sig[m:], 1e-300))))
    d_logit = np.empty_like(logit)
    d_logit[:m] = (sig[:m] - 1.0) / m
    d_logit[m:] = sig[m:] / m
    grads, _ = tape.backward(d_logit[:, None])
    disc.opt.step(mlp_grads_to_list(disc.net, grads))
    return loss


def adversarial_penalty(disc: Discriminator, s_pairs: np.ndarray, z: np.ndarray) -> float:
    """sum log(1 - sigma(D(real))) over rows and features (the raw penalty)."""
    total = 0.0
    for f in range(disc.n_features):
        sig = _sigmoid(disc.logits(disc.inputs(s_pairs, z, f)))
        total += float(np.log(np.maximum(1.0 - sig, 1e-300)).sum())
    return total


def penalty_grad_z(disc: Discriminator, s_pairs: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. z of sum[-log(1 - sigma(D(real)))], the encoder's charge.

    The charge is a sum, not a mean: the configured penalty weight multiplies
    per-item terms, so its strength does not silently shrink with batch size.
    """
    dz = np.zeros_like(z)
    for f in range(disc.n_features):
        x = disc.inputs(s_pairs, z, f)
        logit, tape = disc.net.forward_tape(x)
        sig = _sigmoid(logit[:, 0])
        d_logit = sig[:, None]   # d/dlogit of -log(1 - sigma)
        d_in = tape.backward_input(d_logit)
        dz[:, f] += d_in[:, 2 * disc.n_features + 2]
    return dz


# ---------------------------------------------------------------------------
# exact MI enumeration
# ---------------------------------------------------------------------------

def _mi(p_xy: np.ndarray) -> float:
    px = p_xy.sum(axis=1, keepdims=True)
    py = p_xy.sum(axis=0, keepdims=True)
    mask = p_xy > 0
    return float((p_xy[mask] * np.log(p_xy[mask] / (px @ py)[mask])).sum())


def verify_mi_bound(joint_pmf: np.ndarray) -> dict:
    """Exact check of I(A;Z) <= I(A;B) + I(A;Z|B) on pmf p[a, b, z]."""
    p = np.asarray(joint_pmf, dtype=np.float64)
    if p.ndim != 3:
        raise DistError("pmf must be a 3-d array over (A, B, Z)")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
        raise DistError("pmf must be non-negative and sum to 1")
    i_az = _mi(p.sum(axis=1))
    i_ab = _mi(p.sum(axis=2))
    i_az_given_b = 0.0
    for b in range(p.shape[1]):
        pb = p[:, b, :].sum()
        if pb > 0:
            i_az_given_b += pb * _mi(p[:, b, :] / pb)
    slack = i_ab + i_az_given_b - i_az
    return {
        "i_az": i_az,
        "i_ab": i_ab,
        "i_az_given_b": i_az_given_b,
        "slack": slack,
        "bound_holds": bool(slack >= -1e-10),
    }
