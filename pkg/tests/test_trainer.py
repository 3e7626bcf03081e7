import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from quietgait import checks, evaluation, sim, trainer
from quietgait.policy import ActorCritic


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.floats(0.5, 0.999), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_gae_matches_direct_sum(T, N, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=(2, T, N))
    d = rng.uniform(size=(T, N)) < 0.3
    last = rng.normal(size=N)
    adv, ret = trainer.gae_advantages(r, v, d, last, gamma, lam)
    np.testing.assert_allclose(adv, checks.gae_brute_force(r, v, d, last, gamma, lam), atol=1e-12)
    np.testing.assert_allclose(ret, adv + v)


def test_gae_lambda_one_gives_discounted_return():
    r = np.array([[1.0], [2.0], [3.0]])
    adv, ret = trainer.gae_advantages(r, np.zeros((3, 1)), np.zeros((3, 1)), np.array([10.0]), 0.5, 1.0)
    assert ret[0, 0] == pytest.approx(1 + 0.5 * 2 + 0.25 * 3 + 0.125 * 10)


def test_gaussian_kl_zero_on_identity_and_positive():
    mu = torch.randn(5, 3)
    std = torch.rand(3) + 0.1
    assert torch.allclose(trainer.gaussian_kl(mu, std, mu, std), torch.zeros(5), atol=1e-6)
    assert torch.all(trainer.gaussian_kl(mu, std, mu + 0.1, std * 1.2) > 0)


def test_ppo_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    assert max(checks.ppo_gradient_error(rng) for _ in range(3)) < 1e-4


def _bandit_batch(ac, n, target, gen):
    x = np.ones((1, n, 3))
    out = ac.act(x[0], "sample", gen)
    with torch.no_grad():
        mean = ac.actor(torch.as_tensor(x[0], dtype=torch.float32)).numpy()
    reward = -np.sum((out.action - target) ** 2, axis=-1)
    z = np.zeros((1, n))
    return trainer.RolloutBatch(
        obs=x, history=x, next_obs=x, actor_in=x, critic_in=x, actions=out.action[None], raw_actions=out.raw[None],
        log_probs=out.log_prob[None], old_mean=mean[None], rewards=reward[None], r_phase=z, r_task=z, r_other=z,
        beta=z, values=ac.values(x[0])[None], dones=np.ones((1, n), bool), timeouts=np.zeros((1, n), bool),
        valid=np.ones((1, n), bool), last_values=np.zeros(n), vel=z, height=z, phase=z)


def test_ppo_solves_a_bandit():
    torch.manual_seed(0)
    gen = torch.Generator().manual_seed(0)
    ac = ActorCritic(3, 3, hidden=16, init_std=0.3, final_gain=1.0, output_scale=1.0)
    cfg = trainer.TrainConfig(num_envs=256, steps=1, lr=3e-3, lr_schedule="fixed", entropy_coef=0.0)
    opt = torch.optim.Adam(ac.parameters(), lr=cfg.lr)
    target = np.array([0.4, -0.3, 0.1, 0.0, 0.2, -0.2, 0.3, -0.1])
    for _ in range(60):
        trainer.ppo_update(_bandit_batch(ac, 256, target, gen), ac, opt, cfg, gen)
    mean = ac.act(np.ones((1, 3)), "mean").action[0]
    assert np.max(np.abs(mean - target)) < 0.1


def test_curriculum_moves_one_level_after_full_window():
    cfg = trainer.TrainConfig(curriculum_window=3)
    assert trainer.curriculum_step([0.9, 0.9], 0, cfg) == 0
    assert trainer.curriculum_step([0.9, 0.9, 0.9], 0, cfg) == 1
    assert trainer.curriculum_step([0.9] * 3, 4, cfg) == 4
    assert trainer.curriculum_step([0.1] * 3, 2, cfg) == 1
    assert trainer.curriculum_step([0.1] * 3, 0, cfg) == 0
    assert trainer.curriculum_step([0.6] * 3, 2, cfg) == 2
    with pytest.raises(ValueError):
        trainer.curriculum_step([], 7, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        trainer.TrainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        trainer.TrainConfig(command_max=(1.0,))
    with pytest.raises(ValueError):
        trainer.TrainConfig(lr_schedule="cosine")
    assert trainer.TrainConfig.paper_scale().num_envs == 4096


def test_rollout_shapes_and_labels():
    cfg = trainer.TrainConfig(num_envs=3, steps=6)
    rng = np.random.default_rng(0)
    env = trainer.VecEnv(sim.SimConfig(), cfg, rng, 0)
    est, ac = trainer.build_models(cfg, sim.SimConfig())
    b = trainer.collect_rollouts(env, est, ac, cfg, generator=torch.Generator().manual_seed(0))
    assert b.rewards.shape == (6, 3)
    assert b.history.shape == (6, 3, cfg.history_length, sim.OBS_DIM)
    assert b.critic_in.shape[-1] == 80 and b.actor_in.shape[-1] == 59
    assert np.all((b.phase >= 0) & (b.phase <= 1))
    assert np.all(np.isfinite(b.rewards))


def test_reward_phase_source_only_moves_the_noise_reward():
    out = {}
    for source in ("truth", "estimate"):
        cfg = trainer.TrainConfig(num_envs=3, steps=6, reward_phase_source=source)
        env = trainer.VecEnv(sim.SimConfig(), cfg, np.random.default_rng(0), 0)
        torch.manual_seed(0)
        est, ac = trainer.build_models(cfg, sim.SimConfig())
        out[source] = trainer.collect_rollouts(env, est, ac, cfg, generator=torch.Generator().manual_seed(0))
    a, b = out["truth"], out["estimate"]
    np.testing.assert_array_equal(a.phase, b.phase)
    assert not np.array_equal(a.rewards, b.rewards)
    with pytest.raises(ValueError):
        trainer.TrainConfig(reward_phase_source="oracle")


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    torch.manual_seed(0)
    final = trainer.train(trainer.TrainConfig.smoke(), out)
    return out, final


def test_smoke_training_writes_loadable_checkpoint(smoke_run):
    out, final = smoke_run
    est, ac, meta = trainer.load_checkpoint(final)
    assert meta["kind"] == "train"
    recs = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    assert [r["iteration"] for r in recs] == list(range(20))
    for key in ("r_phase", "r_task", "r_other", "est_total", "phase_rmse", "level", "mnl_quiet", "wall_time"):
        assert key in recs[-1]
    ctrl = evaluation.load_policy(out / "deploy.qgc")
    assert ctrl.history_length == 20
    assert (out / "ckpt_00010.qgc").exists()
