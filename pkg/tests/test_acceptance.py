"""End-to-end acceptance criteria.

Each test records a one-line verdict in ``conftest.ACCEPTANCE``; the lines are
printed in the terminal summary whether or not the assertion holds.
"""

import time
from importlib import resources

import numpy as np
import pytest
import torch

from conftest import ACCEPTANCE
from quietgait import acoustics, checks, evaluation, phase, rewards

SEED = 0
POLICY = resources.files("quietgait") / "data" / "desk_policy.qgc"


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def policy_path():
    if not POLICY.is_file():
        pytest.fail(f"committed checkpoint missing: {POLICY}")
    return str(POLICY)


def test_01_gradients_match_finite_differences():
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    errs = {}
    for term in ("est", "fwd", "phase"):
        errs[term] = max(checks.estimator_gradient_error(rng, term) for _ in range(20))
    errs["ppo"] = max(checks.ppo_gradient_error(rng) for _ in range(20))
    took = time.perf_counter() - start
    worst = max(errs.values())
    record(1, worst < 1e-4 and took < 60.0,
           f"worst relative error {worst:.2e} (<1e-4) over 20 draws x 4 losses in {took:.1f} s (<60 s)")


def test_02_kl_matches_monte_carlo():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(10):
        mu = rng.normal(0, 1, 4)
        sigma = rng.uniform(0.3, 2.0, 4)
        est, se = checks.kl_monte_carlo(mu, sigma, rng, samples=100_000)
        worst = max(worst, abs(float(phase.kl_gaussian(mu, 2 * np.log(sigma))) - est) / se)
    record(2, worst < 3.0, f"worst |closed - MC| = {worst:.2f} SE (<3) at 1e5 samples, 10 draws")


def test_03_rewards_match_scalar_oracle():
    rng = np.random.default_rng(SEED)
    rel = checks.reward_error(rewards.RewardWeights(), rng, n=1000)
    blend = checks.blend_identity_error(rng)
    record(3, rel < 1e-12 and blend < 1e-15,
           f"1000 states rel err {rel:.1e} (<1e-12); blend identities max err {blend:.1e}")


def test_04_acoustic_arithmetic():
    p0 = acoustics.P_REF
    ratio = 10 ** ((acoustics.spl(2.512 * p0) - acoustics.spl(p0)) / 20)
    ratio_err = abs(ratio / 10 ** (8 / 20) - 1)
    doubling = acoustics.attenuate(80.0, 1.0) - acoustics.attenuate(80.0, 2.0)
    pair = acoustics.combine_levels([70.0, 70.0]) - 70.0
    ok = ratio_err < 0.01 and abs(doubling - 6.02) < 0.01 and abs(pair - 3.01) < 0.01
    record(4, ok, f"8 dB ratio off by {ratio_err:.4%}; doubling drop {doubling:.4f} dB; "
                  f"equal pair +{pair:.4f} dB")


def test_05_phase_pipeline_on_synthetic_trot():
    data, env, step, legs = checks.synthetic_trot_data(steps=5000, seed=SEED)
    # labels evaluated at the recorded events are exactly 0 (lift-off) and 1 (touchdown)
    worst = 0.0
    for per_env in legs:
        for leg, evs in enumerate(per_env):
            for ev in evs:
                want = 0.0 if ev.kind == "liftoff" else 1.0
                got = phase.leg_phase(evs, np.array([ev.time]))[0]
                worst = max(worst, abs(got - want))
    assert sum(len(e) for per_env in legs for e in per_env) > 100
    torch.set_num_threads(1)
    rmse, took, _ = checks.fit_phase_estimator(data, step >= 400, budget_s=600.0, seed=SEED)
    ok = worst == 0.0 and bool(np.all(rmse < 0.1)) and took <= 600.0
    record(5, ok, f"label error at events {worst:.1e}; held-out RMSE per leg "
                  f"{np.round(rmse, 3).tolist()} (<0.1) after {took:.0f} s CPU (<600 s)")


def test_06_calibration_reproduces_anchors():
    gains = evaluation.calibrate_gains(seed=SEED)
    cfg = acoustics.AcousticConfig(gains=gains)
    got = {}
    for surface, anchor in evaluation.CALIBRATION_ANCHORS.items():
        # fresh seeds: the fit must generalise beyond the trials it was solved on
        res = evaluation.run_surface_trials(evaluation.TrialSpec(surface, 0.5, seed=SEED + 1), cfg)
        got[surface] = res.mnl_mean - anchor
    worst = max(abs(v) for v in got.values())
    record(6, worst <= 0.5, "MNL minus anchor: " + ", ".join(f"{k} {v:+.3f}" for k, v in got.items())
           + " dBA (|.|<=0.5)")


def test_07_quiet_factor_lowers_noise(policy_path):
    spec = dict(surface="wood", speed=0.5, seed=SEED)
    quiet = evaluation.run_surface_trials(evaluation.TrialSpec(beta=1.0, controller=policy_path, **spec))
    loud = evaluation.run_surface_trials(evaluation.TrialSpec(beta=0.0, controller=policy_path, **spec))
    base = evaluation.run_surface_trials(evaluation.TrialSpec(controller="trot", **spec))
    ok = (quiet.mnl_mean <= loud.mnl_mean - 3.0 and max(quiet.mnl_mean, loud.mnl_mean) < base.mnl_mean
          and not quiet.failed and not loud.failed)
    record(7, ok, f"wood 0.5 m/s MNL beta=1 {quiet.mnl_mean:.2f}, beta=0 {loud.mnl_mean:.2f}, "
                  f"trot {base.mnl_mean:.2f} dBA; falls {quiet.failed}/{loud.failed} "
                  f"(need beta1 <= beta0 - 3 and both < trot)")


def _non_decreasing(means, sems):
    # a step down only counts when it exceeds the pair's combined standard error
    return all(b - a >= -np.hypot(sa, sb) for a, b, sa, sb in zip(means, means[1:], sems, sems[1:]))


def test_08_sweep_trends(policy_path):
    betas = [0.0, 0.25, 0.5, 0.75, 1.0]
    sweep = evaluation.beta_sweep(betas, 0.8, policy_path, seed=SEED)
    mnl = [r.mnl_mean for r in sweep]
    rho_beta = evaluation.spearman(betas, mnl)
    err = [float(np.mean(r.tracking_error)) for r in sweep]
    sem = [float(np.std(r.tracking_error) / np.sqrt(max(len(r.tracking_error), 1))) for r in sweep]
    tracking_ok = _non_decreasing(err, sem)

    speeds = [0.4, 0.6, 0.8, 1.0]
    rho_speed = {}
    for label, ctrl, beta in (("trot", "trot", 0.0), ("policy b=0", policy_path, 0.0),
                              ("policy b=1", policy_path, 1.0)):
        res = evaluation.speed_sweep(speeds, [(ctrl, beta)], seed=SEED)
        rho_speed[label] = evaluation.spearman(speeds, [r.mnl_mean for r in res])
    ok = rho_beta <= -0.8 and tracking_ok and all(r >= 0.6 for r in rho_speed.values())
    record(8, ok, f"rho(beta, MNL) {rho_beta:+.2f} (<=-0.8), MNL {np.round(mnl, 2).tolist()}; "
                  f"tracking err {np.round(err, 4).tolist()} non-decreasing {tracking_ok}; "
                  "rho(speed, MNL) " + ", ".join(f"{k} {v:+.2f}" for k, v in rho_speed.items()) + " (>=0.6)")


def test_09_long_walk(policy_path):
    runs = [evaluation.long_walk(policy_path, speed_cmd=0.36, beta=1.0, seed=SEED) for _ in range(2)]
    walk = runs[0]
    identical = runs[0].trace.to_csv() == runs[1].trace.to_csv()
    flag = "below" if walk.safe else "above"
    ok = walk.completed and identical
    record(9, ok, f"completed {walk.completed} (fell at x={walk.failure_x:.1f} m)" if not walk.completed else
           f"completed 91.7 m in {walk.duration:.0f} s, MNL {walk.mnl:.2f} dBA {flag} the 70 dBA threshold; "
           f"rerun trace byte-identical {identical}")


def test_10_zero_motion_sits_on_floor():
    res = evaluation.run_surface_trials(evaluation.TrialSpec("tiles", 0.0, trials=3, seed=SEED))
    walk = evaluation.long_walk("trot", speed_cmd=0.0, seed=SEED)
    levels = set(res.mnl) | set(res.pnl) | {walk.mnl, walk.pnl}
    record(10, levels == {55.0}, f"zero-motion MNL/PNL values {sorted(levels)} (exactly 55.0)")
