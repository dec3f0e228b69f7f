import numpy as np
import pytest

from relopts.errors import StateError
from relopts.grid import JointState, empty_grid, reset
from relopts.options import (
    IntrinsicRewardSpec, JointOption, OptionConfig, intrinsic_reward,
    rollout_option, train_option,
)


@pytest.fixture(scope="module")
def trained_pair(small_spec, small_abstraction):
    cfg = OptionConfig(steps=12000, state_mode="relative", step_cap=40)
    plus = train_option(small_spec, IntrinsicRewardSpec(2, +1), small_abstraction, cfg, seed=5)
    minus = train_option(small_spec, IntrinsicRewardSpec(2, -1), small_abstraction, cfg, seed=5)
    return plus, minus


def test_intrinsic_reward_same_state_zero(small_spec, small_abstraction):
    s = reset(small_spec, seed=0)
    r = intrinsic_reward(IntrinsicRewardSpec(2, +1), small_abstraction, s, s, small_spec)
    assert r == 0.0


def test_intrinsic_reward_formula(small_spec, small_abstraction):
    spec = small_spec
    s1 = reset(spec, seed=1)
    s2 = reset(spec, seed=2)
    e1 = small_abstraction.eigen_values_at(s1, spec)[1]
    e2 = small_abstraction.eigen_values_at(s2, spec)[1]
    r = intrinsic_reward(IntrinsicRewardSpec(2, +1), small_abstraction, s1, s2, spec)
    assert r == pytest.approx(e2 - e1, abs=1e-15)
    r_neg = intrinsic_reward(IntrinsicRewardSpec(2, -1), small_abstraction, s1, s2, spec)
    assert r_neg == pytest.approx(-(e2 - e1), abs=1e-15)


def test_signs_learn_different_tables(trained_pair):
    plus, minus = trained_pair
    diff = 0.0
    for i in range(2):
        shared = set(plus.q[i]) & set(minus.q[i])
        for k in shared:
            diff = max(diff, np.abs(plus.q[i][k] - minus.q[i][k]).max())
    assert diff > 0.0


def test_rollout_untrained_raises(small_spec, small_abstraction):
    opt = JointOption("x", IntrinsicRewardSpec(2, 1), small_spec, OptionConfig())
    with pytest.raises(StateError):
        rollout_option(opt, reset(small_spec, seed=0), small_spec, small_abstraction)


def test_rollout_telescoping_identity(small_spec, small_abstraction, trained_pair):
    plus, _ = trained_pair
    for seed in range(5):
        ro = rollout_option(plus, reset(small_spec, seed=seed), small_spec, small_abstraction)
        assert sum(ro.rewards) == pytest.approx(ro.eigen_last - ro.eigen_first, abs=1e-9)


def test_rollout_improves_eigenvalue(small_spec, small_abstraction, trained_pair):
    plus, _ = trained_pair
    gains = []
    for seed in range(30):
        ro = rollout_option(plus, reset(small_spec, seed=seed), small_spec, small_abstraction)
        gains.append(ro.eigen_last - ro.eigen_first)
    assert np.mean(gains) > 0.0


def test_rollout_unanimous_term_immediately(small_spec, small_abstraction):
    spec = small_spec
    opt = JointOption("t", IntrinsicRewardSpec(2, 1), spec, OptionConfig(state_mode="relative"))
    opt.trained = True
    state = reset(spec, seed=3)
    for i in range(spec.n_agents):
        key = opt.state_key(i, state, spec, small_abstraction)
        row = opt.row(i, key)
        row[opt.term_index(i)] = 1.0
    ro = rollout_option(opt, state, spec, small_abstraction)
    assert ro.reason == "term"
    assert len(ro.actions) == 0
    assert ro.final_state == state


def test_rollout_cap_when_never_terminating(small_abstraction):
    spec = empty_grid(6, 6, 2, horizon=500)
    opt = JointOption("c", IntrinsicRewardSpec(2, 1), spec, OptionConfig(state_mode="relative"))
    opt.trained = True  # zero tables: greedy is the first move action, never term
    ro = rollout_option(opt, reset(spec, seed=4), spec, small_abstraction)
    assert ro.reason == "cap"
    assert len(ro.actions) == opt.step_cap


def test_option_training_deterministic(small_spec, small_abstraction):
    cfg = OptionConfig(steps=3000, state_mode="relative")
    a = train_option(small_spec, IntrinsicRewardSpec(2, +1), small_abstraction, cfg, seed=9)
    b = train_option(small_spec, IntrinsicRewardSpec(2, +1), small_abstraction, cfg, seed=9)
    for i in range(2):
        assert set(a.q[i]) == set(b.q[i])
        for k in a.q[i]:
            assert np.array_equal(a.q[i][k], b.q[i][k])


def test_option_serialization_roundtrip(small_spec, small_abstraction, trained_pair):
    plus, _ = trained_pair
    blob = plus.to_dict()
    back = JointOption.from_dict(blob, small_spec, OptionConfig())
    s = reset(small_spec, seed=8)
    r1 = rollout_option(plus, s, small_spec, small_abstraction)
    r2 = rollout_option(back, s, small_spec, small_abstraction)
    assert r1.actions == r2.actions
    assert r1.final_state == r2.final_state


def test_training_does_not_mutate_abstraction(small_spec, small_abstraction):
    basis = small_abstraction.basis
    before_vec = basis.eigenvectors.copy()
    before_phi = [p.copy() for p in small_abstraction.phi.net.params()]
    cfg = OptionConfig(steps=2500, state_mode="relative")
    train_option(small_spec, IntrinsicRewardSpec(2, -1), small_abstraction, cfg, seed=2)
    assert np.array_equal(basis.eigenvectors, before_vec)
    for a, b in zip(small_abstraction.phi.net.params(), before_phi):
        assert a.tobytes() == b.tobytes()
