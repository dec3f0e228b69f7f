"""Minimal feedforward network kit: MLP forward/backward tape and Adam.

Float64 throughout. Hidden layers are ReLU, the output layer is linear.
Backward passes are exact reverse-mode; there is no general autodiff, just
enough structure for the composite heads built on top (contrastive distance,
Fermat encoder, discriminator), each of which hand-chains through the tapes.

Stop-gradient is realized structurally: a frozen network's tape can still
return input gradients (`backward_input`) while its parameter gradients are
simply never applied.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import NumericsError, ShapeError, TapeError


class Mlp:
    def __init__(self, layer_dims: list[int], rng: np.random.Generator):
        if len(layer_dims) < 2:
            raise ShapeError("need input and output dims")
        self.layer_dims = list(layer_dims)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_tape(x)
        return y

    def forward_tape(self, x: np.ndarray) -> tuple[np.ndarray, "GradTape"]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.layer_dims[0]:
            raise ShapeError(f"input dim {x.shape[-1]} != {self.layer_dims[0]}")
        lead = x.shape[:-1]
        h = x.reshape(-1, self.layer_dims[0])
        inputs = []
        for k in range(self.n_layers):
            inputs.append(h)
            h = h @ self.weights[k] + self.biases[k]
            if k < self.n_layers - 1:
                h = np.maximum(h, 0.0)
        out = h.reshape(*lead, self.layer_dims[-1])
        if squeeze:
            out = out[0]
        return out, GradTape(self, inputs, lead, squeeze)


class GradTape:
    """Intermediates of one forward pass; single use."""

    def __init__(self, net: Mlp, inputs: list[np.ndarray], lead: tuple, squeeze: bool):
        self.net = net
        self.inputs = inputs
        self.lead = lead
        self.squeeze = squeeze
        self.used = False

    def backward(self, d_out: np.ndarray) -> tuple[dict[int, tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Return ({layer: (dW, db)}, d_input)."""
        if self.used:
            raise TapeError("tape already consumed")
        self.used = True
        d = np.asarray(d_out, dtype=np.float64)
        if self.squeeze:
            d = d[None, :]
        d = d.reshape(-1, self.net.layer_dims[-1])
        grads: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for k in range(self.net.n_layers - 1, -1, -1):
            x_k = self.inputs[k]
            if k < self.net.n_layers - 1:
                # d arrived post-ReLU of layer k; mask by the activation
                pre = x_k @ self.net.weights[k] + self.net.biases[k]
                d = d * (pre > 0.0)
            grads[k] = (x_k.T @ d, d.sum(axis=0))
            d = d @ self.net.weights[k].T
        d_in = d.reshape(*self.lead, self.net.layer_dims[0])
        if self.squeeze:
            d_in = d_in[0]
        return grads, d_in

    def backward_input(self, d_out: np.ndarray) -> np.ndarray:
        """Input gradient only; parameters are treated as stopped."""
        _, d_in = self.backward(d_out)
        return d_in


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray | None]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("gradient list length mismatch")
        for g in grads:
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericsError("non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, g in enumerate(grads):
            if g is None:
                g = np.zeros_like(self.params[i])
            if g.shape != self.params[i].shape:
                raise ShapeError(f"grad shape {g.shape} != param shape {self.params[i].shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            self.params[i] -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def mlp_grads_to_list(net: Mlp, grads: dict[int, tuple[np.ndarray, np.ndarray]]) -> list[np.ndarray]:
    """Order tape grads to match net.params() (weights then biases)."""
    return [grads[k][0] for k in range(net.n_layers)] + [grads[k][1] for k in range(net.n_layers)]


def accumulate(target: list[np.ndarray] | None, new: list[np.ndarray]) -> list[np.ndarray]:
    if target is None:
        return [g.copy() for g in new]
    for t, g in zip(target, new):
        t += g
    return target


def serialize_mlp(net: Mlp) -> dict:
    return {
        "layer_dims": net.layer_dims,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def deserialize_mlp(obj: dict) -> Mlp:
    net = Mlp(obj["layer_dims"], np.random.default_rng(0))
    net.weights = [np.array(w, dtype=np.float64) for w in obj["weights"]]
    net.biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
    return net


def mlp_to_json(net: Mlp) -> str:
    return json.dumps(serialize_mlp(net))


def mlp_from_json(text: str) -> Mlp:
    return deserialize_mlp(json.loads(text))


def finite_difference_check(fn, params: list[np.ndarray], analytic: list[np.ndarray],
                            rng: np.random.Generator, n_probes: int = 100,
                            h: float = 1e-4) -> float:
    """Max relative error of `analytic` vs central differences of scalar `fn`.

    Probes random coordinates of random parameter arrays. Relative error is
    |a - fd| / max(1e-8, |a| + |fd|), so zero gradients must match zero.
    """
    worst = 0.0
    for _ in range(n_probes):
        pi = int(rng.integers(len(params)))
        p = params[pi]
        if p.size == 0:
            continue
        flat = int(rng.integers(p.size))
        idx = np.unravel_index(flat, p.shape)
        orig = p[idx]
        p[idx] = orig + h
        f_plus = fn()
        p[idx] = orig - h
        f_minus = fn()
        p[idx] = orig
        fd = (f_plus - f_minus) / (2.0 * h)
        a = analytic[pi][idx]
        err = abs(a - fd) / max(1e-8, abs(a) + abs(fd))
        worst = max(worst, err)
    return worst
