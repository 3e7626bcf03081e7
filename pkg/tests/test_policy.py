import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from quietgait import policy, sim


def test_command_validation():
    assert policy.Command(0.5, 0.0, 1.0).as_array().tolist() == [0.5, 0.0, 1.0]
    with pytest.raises(ValueError):
        policy.Command(0.5, 0.0, 1.2)


def test_dimensions():
    actor_dim, critic_dim = policy.default_dims(16)
    assert actor_dim == sim.OBS_DIM + 11 + 2 + 16
    assert critic_dim == actor_dim + policy.PRIV_DIM
    priv = policy.PrivilegedState(np.zeros(11), np.zeros(2), np.zeros(4), np.zeros(4))
    assert priv.as_array().shape == (policy.PRIV_DIM,)


def test_initial_actions_are_small_and_clipped():
    torch.manual_seed(0)
    ac = policy.ActorCritic(*policy.default_dims())
    x = np.random.default_rng(0).normal(size=(64, policy.default_dims()[0]))
    mean = ac.act(x, "mean").action
    assert np.max(np.abs(mean)) < 0.05
    out = ac.act(x * 1e4, "sample", torch.Generator().manual_seed(1))
    assert np.all(np.abs(out.action) <= 1.0)


def test_log_prob_matches_normal_density():
    torch.manual_seed(0)
    ac = policy.ActorCritic(5, 7, hidden=8)
    x = torch.randn(4, 5)
    out = ac.act(x.numpy(), "sample", torch.Generator().manual_seed(2))
    mean = ac.actor(x).detach().numpy()
    std = ac.std().detach().numpy()
    raw = out.raw
    ref = np.sum(-0.5 * ((raw - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi), axis=-1)
    np.testing.assert_allclose(out.log_prob, ref, rtol=1e-5)


def test_sampling_is_reproducible():
    ac = policy.ActorCritic(5, 7, hidden=8)
    x = np.ones((3, 5))
    a = ac.act(x, "sample", torch.Generator().manual_seed(3)).raw
    b = ac.act(x, "sample", torch.Generator().manual_seed(3)).raw
    assert np.array_equal(a, b)


@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_targets_are_offsets_from_stand(a):
    cfg = sim.SimConfig()
    q = policy.action_to_targets(np.array(a), cfg.q_stand, cfg)
    raw = np.asarray(cfg.q_stand) + np.array(a)
    np.testing.assert_allclose(q, np.clip(raw, cfg.joint_lower, cfg.joint_upper))
