import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permevade.attack import (FLIP, BenignOracle, EnvConfig, all_states, apply_action, env_reset,
                              env_step, state_bits, state_index, state_indices)
from permevade.errors import EmptyPool, InvalidAction

from helpers import make_dataset, malware_pool, table_detector


def const(p, k=2):
    return table_detector(np.full(1 << k, p))


def test_reset_single_sample():
    pool = malware_pool([[1, 0, 1]])
    for seed in range(5):
        assert env_reset(pool, seed).tolist() == [1, 0, 1]


def test_reset_reproducible():
    pool = malware_pool([[0, 1], [1, 0]])
    a = np.random.default_rng(3)
    b = np.random.default_rng(3)
    seq_a = [env_reset(pool, a).tolist() for _ in range(20)]
    seq_b = [env_reset(pool, b).tolist() for _ in range(20)]
    assert seq_a == seq_b
    assert len({tuple(s) for s in seq_a}) == 2


def test_reset_rejects_benign_and_empty():
    with pytest.raises(EmptyPool):
        env_reset(make_dataset([[0, 1], [1, 1]], [1, 0]), 0)
    with pytest.raises(EmptyPool):
        env_reset(malware_pool(np.zeros((0, 2))), 0)


def test_step_goal_reward():
    r = env_step(EnvConfig(), const(0.8), [0, 0], 1, 0)
    assert r.next_state.tolist() == [1, 0]
    assert r.done
    assert r.reward == pytest.approx(1.0 * 0.8 - 0.05 * 1 + 10.0 * 1)
    assert r.reward == pytest.approx(10.75)


def test_step_wasted_action_still_counts():
    r0 = env_step(EnvConfig(max_steps=5), const(0.2), [1, 0], 1, 0)
    assert r0.next_state.tolist() == [1, 0]
    assert r0.reward == pytest.approx(0.2 - 0.05 * 1)
    r1 = env_step(EnvConfig(max_steps=5), const(0.2), [1, 0], 1, 1)
    assert r1.reward == pytest.approx(0.2 - 0.05 * 2)


def test_step_without_goal():
    r = env_step(EnvConfig(max_steps=5), const(0.2), [0, 0], 2, 0)
    assert r.next_state.tolist() == [0, 1]
    assert not r.done
    assert r.reward == pytest.approx(0.15)


def test_stop_action_terminates_without_change():
    r = env_step(EnvConfig(), const(0.2), [0, 1], 0, 1)
    assert r.next_state.tolist() == [0, 1]
    assert r.done
    assert r.reward == pytest.approx(0.2 - 0.05 * 1)


def test_cap_terminates():
    assert env_step(EnvConfig(max_steps=2), const(0.1), [0, 0], 1, 1).done
    assert not env_step(EnvConfig(max_steps=3), const(0.1), [0, 0], 1, 1).done


def test_goal_is_strictly_above_threshold():
    assert not env_step(EnvConfig(max_steps=9), const(0.5), [0, 0], 1, 0).done
    assert env_step(EnvConfig(max_steps=9), const(0.5000001), [0, 0], 1, 0).done


def test_invalid_action():
    with pytest.raises(InvalidAction):
        env_step(EnvConfig(), const(0.1), [0, 0], 3, 0)
    with pytest.raises(InvalidAction):
        env_step(EnvConfig(), const(0.1), [0, 0], -1, 0)


def test_flip_mode_clears_bits():
    r = env_step(EnvConfig(action_mode=FLIP), const(0.1), [1, 0], 1, 0)
    assert r.next_state.tolist() == [0, 0]
    assert apply_action(0b11, 2, FLIP) == 0b01
    assert apply_action(0b01, 2) == 0b11


@pytest.mark.parametrize("kw", [dict(gamma=1.0), dict(max_steps=0), dict(w2=-1.0),
                                dict(benign_threshold=1.0), dict(action_mode="remove")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        EnvConfig(**kw)


def test_config_round_trip():
    c = EnvConfig(w1=2.0, gamma=0.5, max_steps=4, action_mode=FLIP)
    assert EnvConfig.from_dict(c.to_dict()) == c
    assert EnvConfig().steps_for(10) == 10


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=16))
def test_state_index_bijection(bits):
    idx = state_index(bits)
    assert state_bits(idx, len(bits)).tolist() == bits
    assert state_indices(np.array([bits]))[0] == idx


def test_state_index_bit_order():
    assert state_index([1, 0, 0]) == 1
    assert state_index([0, 0, 1]) == 4
    assert np.array_equal(state_indices(all_states(4)), np.arange(16))


def test_benign_oracle_matches_model():
    det = table_detector(np.linspace(0, 1, 16))
    full = BenignOracle(det, 4)
    lazy = BenignOracle(det, 4, precompute_limit=2)
    assert lazy.table is None
    for s in range(16):
        assert full(s) == lazy(s) == pytest.approx(s / 15)
