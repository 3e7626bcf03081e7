"""Hand-computed input/output pairs for individual operations."""

import math

import numpy as np
import pytest
import torch
from scipy import stats

from quietgait import acoustics, cli, evaluation, phase, policy, rewards, sim, terrain, trainer
from quietgait.sim import ContactEvent


def test_pd_torque_values():
    cfg = sim.SimConfig()
    assert sim.pd_torque(np.full(8, 0.1), np.zeros(8), np.zeros(8), cfg) == pytest.approx(np.full(8, 2.0))
    assert sim.pd_torque(np.zeros(8), np.zeros(8), np.ones(8), cfg) == pytest.approx(np.full(8, -0.5))


def test_ballistic_drop_impact_speed():
    cfg = sim.SimConfig()
    ground = terrain.flat()
    s = sim.reset(cfg, ground, 0)
    s.qpos[0, 1] += 0.1
    s.stance[:] = False
    s.contact[:] = False
    stepper = sim.BatchStepper(cfg, [ground])
    touch = []
    for _ in range(15):
        s, events, _ = stepper.step(s, np.asarray(cfg.q_stand)[None])
        touch += [e for e in events if e.kind == "touchdown"]
    assert len({e.leg for e in touch}) == 4
    for e in touch[:4]:
        assert e.impact_velocity == pytest.approx(math.sqrt(2 * 9.81 * 0.1), rel=0.02)


def test_height_scan_ignores_pitch():
    cfg = sim.SimConfig()
    ground = terrain.rough(np.random.default_rng(2), 0.05)
    s = sim.reset(cfg, ground, 0)
    tilted = s.copy()
    tilted.qpos[0, 2] = 0.3
    np.testing.assert_array_equal(sim.sample_height_scan(s, ground), sim.sample_height_scan(tilted, ground))


def test_level_arithmetic():
    assert acoustics.spl(1000 * acoustics.P_REF) == pytest.approx(60.0)
    assert acoustics.combine_levels([70, 70]) == pytest.approx(73.01, abs=0.005)
    assert acoustics.combine_levels([55, 75]) == pytest.approx(75.04, abs=0.005)
    assert acoustics.attenuate(80.0, 4 * 0.5) == pytest.approx(80.0 - 12.04, abs=0.005)
    tr = acoustics.NoiseTrace(np.array([0.0, 0.05]), np.array([60.0, 70.0]))
    assert acoustics.mnl(tr) == 65.0 and acoustics.pnl(tr) == 70.0


def test_doubling_gain_adds_six_db_to_impact_component():
    ev = [ContactEvent(0, "touchdown", 0.5, 0.4, "wood")]
    lo = acoustics.AcousticConfig(gains={**acoustics.DEFAULT_GAINS, "wood": 1.0})
    hi = acoustics.AcousticConfig(gains={**acoustics.DEFAULT_GAINS, "wood": 2.0})

    def impact_db(cfg):
        lvl = acoustics.synthesize_trace(ev, 1.0, cfg).levels[10]
        return 10 * np.log10(10 ** (lvl / 10) - 10 ** 5.5)

    assert impact_db(hi) - impact_db(lo) == pytest.approx(20 * math.log10(2), abs=1e-9)


def test_kl_values():
    assert phase.kl_gaussian(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5)
    assert phase.kl_gaussian(np.array([0.0]), np.array([1.0])) == pytest.approx((math.e - 2) / 2)


def test_adam_step_tends_to_lr():
    p = torch.nn.Parameter(torch.zeros(1))
    opt = phase.make_optimizer([p], lr=1e-3)
    last = 0.0
    for _ in range(2000):
        opt.zero_grad()
        p.grad = torch.full((1,), 3.7)
        before = float(p.detach())
        opt.step()
        last = before - float(p.detach())
    assert last == pytest.approx(1e-3, rel=1e-3)


def test_reward_values():
    w = rewards.RewardWeights()
    r = rewards.task_reward(np.array([0.0]), np.array([0.0]), 0.5, 0.0, w)[0]
    assert r == pytest.approx(math.exp(-1.0) + 0.5)
    assert rewards.phase_reward(np.array([1.0, 0, 0, 0]), np.array([-1.0, 0, 0, 0])) == pytest.approx(-0.05 * math.e)
    assert rewards.phase_reward(np.array([0.0] * 4), np.array([1.0, 0, 0, 0])) == pytest.approx(0.01)
    q = rewards.StepQuantities(*(np.zeros(1) for _ in range(4)), np.zeros((1, 8)), np.zeros((1, 8)),
                               np.zeros((1, 8)), np.zeros((1, 8)), np.zeros((1, 8)), np.zeros(1),
                               np.full(1, 0.30), np.zeros((1, 4)), np.zeros((1, 4)))
    q.v_z = np.array([0.5])
    assert rewards.other_reward_terms(q, w)["lin_vel_z"][0] == pytest.approx(-0.5)
    assert rewards.blend(-0.1, 1.5, -0.2, 0.5, 0.2).total == pytest.approx(1.10)


def test_log_prob_at_mean():
    ac = policy.ActorCritic(4, 6, hidden=8, init_std=0.3)
    x = torch.zeros(1, 4)
    mean = ac.actor(x)
    want = float(torch.sum(-torch.log(ac.std() * math.sqrt(2 * math.pi))))
    assert float(ac.log_prob(x, mean.detach())[0]) == pytest.approx(want, rel=1e-6)


def test_target_beyond_limit_clamps():
    cfg = sim.SimConfig()
    q = policy.action_to_targets(np.full(8, 1.0), (2.5, -1.0) * 4, cfg)
    assert q[0] == cfg.hip_limits[1] and q[1] == cfg.knee_limits[1]


def test_beta_is_uniform():
    rng = np.random.default_rng(0)
    draws = trainer.sample_beta(rng, 100_000)
    assert 0.49 <= draws.mean() <= 0.51
    assert stats.kstest(trainer.sample_beta(rng, 1000), "uniform").statistic < 0.06


def test_bandit_converges_within_500_updates():
    torch.manual_seed(1)
    gen = torch.Generator().manual_seed(1)
    ac = policy.ActorCritic(1, 1, hidden=8, init_std=0.3, final_gain=1.0, output_scale=1.0)
    opt = torch.optim.Adam(ac.parameters(), lr=1e-2)
    target = 0.35
    x = torch.ones(64, 1)
    for _ in range(500):
        with torch.no_grad():
            dist = ac.distribution(x)
            raw = dist.sample()
            old = dist.log_prob(raw).sum(-1)
        adv = -((raw.clamp(-1, 1) - target) ** 2).sum(-1)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        loss = trainer.ppo_losses(ac, x, x, raw, old, adv, torch.zeros(64), 0.2, 0.0, 1.0)["total"]
        opt.zero_grad()
        loss.backward()
        opt.step()
    mean = ac.actor(x[:1]).detach().numpy()[0]
    assert np.max(np.abs(mean - target)) < 0.05


def test_stationary_route_is_floor():
    res = evaluation.long_walk("trot", [("wood", 5.0)], speed_cmd=0.0)
    assert res.mnl == 55.0 and res.pnl == 55.0


def test_segment_leq_combines_to_overall():
    res = evaluation.long_walk("trot", [("wood", 2.0), ("tiles", 2.0)], speed_cmd=0.5, leq=True)
    segs = [s for s in res.segments if s["samples"]]
    combined = evaluation.combine_segment_leq([s["mnl"] for s in segs], [s["samples"] for s in segs])
    assert combined == pytest.approx(res.mnl, abs=1e-6)


def test_trot_speed_within_thirty_percent():
    r = evaluation.run_surface_trials(evaluation.TrialSpec("wood", 0.5, 10.0, 2, 0.0, "trot"))
    assert abs(np.mean(r.achieved_speed) - 0.5) < 0.15


def test_check_detects_reward_mutation(capsys):
    assert cli.main(["check", "--set", "reward.drop_foot=-0.06"]) == cli.EXIT_CHECK
    assert "FAIL" in capsys.readouterr().out
