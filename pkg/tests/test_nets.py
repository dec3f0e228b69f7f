import numpy as np
import pytest

from relopts.errors import NumericsError, ShapeError, TapeError
from relopts.nets import (
    Adam, Mlp, accumulate, finite_difference_check, mlp_from_json,
    mlp_grads_to_list, mlp_to_json,
)


def test_zero_net_outputs_zero():
    net = Mlp([3, 4, 2], np.random.default_rng(0))
    for w in net.weights:
        w[:] = 0.0
    assert np.allclose(net.forward(np.ones(3)), 0.0)


def test_identity_linear_layer():
    net = Mlp([3, 3], np.random.default_rng(0))
    net.weights[0][:] = np.eye(3)
    net.biases[0][:] = 0.0
    x = np.array([1.5, -2.0, 0.25])
    assert np.allclose(net.forward(x), x)


def test_hand_evaluated_2x2():
    # derived by hand: relu(x W1 + b1) W2 + b2
    net = Mlp([2, 2, 1], np.random.default_rng(0))
    net.weights[0][:] = [[1.0, -1.0], [2.0, 0.5]]
    net.biases[0][:] = [0.5, -0.25]
    net.weights[1][:] = [[2.0], [-3.0]]
    net.biases[1][:] = [0.1]
    x = np.array([1.0, 2.0])
    # pre = [1*1+2*2+0.5, 1*-1+2*0.5-0.25] = [5.5, -0.25]; relu = [5.5, 0]
    # out = 5.5*2 + 0*-3 + 0.1 = 11.1
    assert np.allclose(net.forward(x), [11.1])


def test_dimension_mismatch():
    net = Mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeError):
        net.forward(np.ones(4))


def test_linear_net_analytic_gradient():
    # loss = 0.5 ||y||^2 on a purely linear net: dW = x y^T
    net = Mlp([3, 2], np.random.default_rng(1))
    x = np.array([1.0, -2.0, 0.5])
    y, tape = net.forward_tape(x)
    grads, _ = tape.backward(y)  # d(0.5||y||^2)/dy = y
    assert np.allclose(grads[0][0], np.outer(x, y))
    assert np.allclose(grads[0][1], y)


def test_tape_single_use():
    net = Mlp([2, 2], np.random.default_rng(0))
    _, tape = net.forward_tape(np.ones(2))
    tape.backward(np.ones(2))
    with pytest.raises(TapeError):
        tape.backward(np.ones(2))


def test_finite_difference_two_layer():
    rng = np.random.default_rng(42)
    net = Mlp([4, 8, 3], rng)
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 3))

    def loss():
        y = net.forward(x)
        return 0.5 * float(np.sum((y - target) ** 2))

    y, tape = net.forward_tape(x)
    grads, _ = tape.backward(y - target)
    glist = mlp_grads_to_list(net, grads)
    err = finite_difference_check(loss, net.params(), glist, rng, n_probes=100)
    assert err <= 1e-4


def test_input_gradient_matches_fd():
    rng = np.random.default_rng(7)
    net = Mlp([3, 6, 1], rng)
    x = rng.normal(size=3)

    _, tape = net.forward_tape(x)
    d_in = tape.backward_input(np.ones(1))
    h = 1e-5
    for i in range(3):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (net.forward(xp)[0] - net.forward(xm)[0]) / (2 * h)
        assert abs(fd - d_in[i]) <= 1e-6 * max(1.0, abs(fd))


def test_stop_gradient_params_untouched():
    rng = np.random.default_rng(0)
    frozen = Mlp([2, 4, 2], rng)
    head = Mlp([2, 4, 2], rng)
    before = [w.copy() for w in frozen.params()]
    opt = Adam(head.params(), lr=1e-2)
    for _ in range(10):
        x = rng.normal(size=(8, 2))
        h1, t1 = head.forward_tape(x)
        y, t2 = frozen.forward_tape(h1)
        d_h1 = t2.backward_input(y)  # frozen net's params receive nothing
        grads, _ = t1.backward(d_h1)
        opt.step(mlp_grads_to_list(head, grads))
    after = frozen.params()
    for b, a in zip(before, after):
        assert b.tobytes() == a.tobytes()


def test_adam_zero_gradient_keeps_params():
    net = Mlp([2, 2], np.random.default_rng(3))
    before = [p.copy() for p in net.params()]
    opt = Adam(net.params(), lr=0.1)
    opt.step([np.zeros_like(p) for p in net.params()])
    for b, a in zip(before, net.params()):
        assert np.allclose(b, a)
    assert opt.t == 1


def test_adam_first_step_magnitude():
    # derived: with constant gradient g, the bias-corrected first step is
    # -lr * g / (|g| + eps) ~= -lr * sign(g)
    p = np.array([0.0, 0.0])
    opt = Adam([p], lr=0.01, eps=1e-8)
    opt.step([np.array([3.0, -0.5])])
    assert np.allclose(p, [-0.01, 0.01], atol=1e-7)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(5)
        net = Mlp([3, 5, 1], rng)
        opt = Adam(net.params(), lr=1e-3)
        x = rng.normal(size=(4, 3))
        for _ in range(5):
            y, tape = net.forward_tape(x)
            grads, _ = tape.backward(y)
            opt.step(mlp_grads_to_list(net, grads))
        return [p.copy() for p in net.params()]

    a, b = run(), run()
    for pa, pb in zip(a, b):
        assert pa.tobytes() == pb.tobytes()


def test_adam_rejects_nonfinite():
    p = np.zeros(2)
    opt = Adam([p])
    with pytest.raises(NumericsError):
        opt.step([np.array([np.nan, 0.0])])


def test_serialization_roundtrip():
    net = Mlp([3, 4, 2], np.random.default_rng(9))
    back = mlp_from_json(mlp_to_json(net))
    x = np.random.default_rng(1).normal(size=(6, 3))
    assert np.array_equal(net.forward(x), back.forward(x))


def test_accumulate():
    a = [np.ones(2)]
    out = accumulate(None, a)
    out = accumulate(out, [np.full(2, 3.0)])
    assert np.allclose(out[0], 4.0)
    assert np.allclose(a[0], 1.0)  # source untouched
