"""Numerical property suite behind ``quietgait check``.

Each check compares a production code path against an independent oracle
(central finite differences, Monte Carlo, direct summation, scalar
re-implementation) and reports the observed error against its tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from quietgait import acoustics, phase, rewards
from quietgait.policy import ActorCritic
from quietgait.trainer import gae_advantages, ppo_losses


@dataclass
class CheckResult:
    name: str
    tolerance: float
    error: float
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:34s} error {self.error:.3e}  tol {self.tolerance:.1e}"


def _result(name, error, tol):
    return CheckResult(name, tol, float(error), bool(error < tol))


# ---------------------------------------------------------------------------
# gradients


def _fd_relative_error(loss_fn, params, coords_per_tensor, rng, eps=1e-6):
    """Worst relative error between autograd and central differences over sampled coordinates."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic, numeric = [], []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            grad = p.grad.view(-1) if p.grad is not None else torch.zeros_like(flat)
            picks = rng.choice(flat.numel(), size=min(coords_per_tensor, flat.numel()), replace=False)
            for j in picks:
                old = float(flat[j])
                flat[j] = old + eps
                up = float(loss_fn())
                flat[j] = old - eps
                down = float(loss_fn())
                flat[j] = old
                analytic.append(float(grad[j]))
                numeric.append((up - down) / (2 * eps))
    a, n = np.array(analytic), np.array(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def small_estimator_batch(rng, n=4, hist=5, obs_dim=6, dtype=torch.float64):
    model = phase.PhaseEstimator(obs_dim=obs_dim, hidden=6, latent=3, scan_dim=4, vel_dim=2, head_hidden=5).to(dtype)
    with torch.no_grad():
        model.obs_offset.copy_(torch.as_tensor(rng.normal(size=obs_dim) * 0.1))
        model.obs_scale.copy_(torch.as_tensor(rng.uniform(0.5, 1.5, obs_dim)))
        for p in model.parameters():
            p.copy_(torch.as_tensor(rng.normal(0, 0.4, p.shape)))
    batch = {
        "history": torch.as_tensor(rng.normal(size=(n, hist, obs_dim))),
        "vel": torch.as_tensor(rng.normal(size=(n, 2))),
        "height": torch.as_tensor(rng.normal(size=(n, 4))),
        "phase": torch.as_tensor(rng.uniform(size=(n, 4))),
        "next_obs": torch.as_tensor(rng.normal(size=(n, obs_dim))),
    }
    noise = torch.as_tensor(rng.normal(size=(n, 3)))
    return model, batch, noise


def estimator_gradient_error(rng, term, weights=None):
    weights = weights or phase.LossWeights(fwd=rng.uniform(0.5, 2), phase=rng.uniform(0.5, 2),
                                           kl=rng.uniform(0.001, 0.1))
    model, batch, noise = small_estimator_batch(rng)
    params = list(model.parameters())
    return _fd_relative_error(lambda: phase.estimator_losses(model, batch, weights, noise)[term], params, 3, rng)


def small_actor_critic(rng, n=6, a_dim=5, c_dim=7, dtype=torch.float64):
    ac = ActorCritic(a_dim, c_dim, hidden=6, layers=3, final_gain=1.0).to(dtype)
    with torch.no_grad():
        for p in ac.parameters():
            p.copy_(torch.as_tensor(rng.normal(0, 0.5, p.shape)))
    actor_in = torch.as_tensor(rng.normal(size=(n, a_dim)))
    critic_in = torch.as_tensor(rng.normal(size=(n, c_dim)))
    with torch.no_grad():
        dist = ac.distribution(actor_in)
        raw = dist.mean + dist.stddev * torch.as_tensor(rng.normal(size=dist.mean.shape))
        # old log-probs near the current ones so most ratios sit inside the clip range
        old = dist.log_prob(raw).sum(-1) + torch.as_tensor(rng.normal(0, 0.1, n))
    adv = torch.as_tensor(rng.normal(size=n))
    ret = torch.as_tensor(rng.normal(size=n))
    return ac, (actor_in, critic_in, raw, old, adv, ret)


def ppo_gradient_error(rng):
    ac, args = small_actor_critic(rng)
    params = list(ac.parameters())
    return _fd_relative_error(lambda: ppo_losses(ac, *args, 0.2, 0.005, 1.0)["total"], params, 3, rng)


# ---------------------------------------------------------------------------
# other oracles


def kl_monte_carlo(mu, sigma, rng, samples=100_000):
    """Monte Carlo KL(q || N(0, I)) with its standard error."""
    z = mu + sigma * rng.standard_normal((samples, len(mu)))
    log_q = np.sum(-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi), axis=1)
    log_p = np.sum(-0.5 * z ** 2 - 0.5 * math.log(2 * math.pi), axis=1)
    d = log_q - log_p
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(samples))


def gae_brute_force(r, v, dones, last_v, gamma, lam):
    """Direct double sum ``A_t = sum_k (gamma lam)^k delta_{t+k}`` cut at episode ends."""
    T, N = r.shape
    v_next = np.concatenate([v[1:], last_v[None]], axis=0)
    delta = r + gamma * v_next * (1 - dones) - v
    adv = np.zeros_like(r)
    for n in range(N):
        for t in range(T):
            total, coef = 0.0, 1.0
            for k in range(t, T):
                total += coef * delta[k, n]
                if dones[k, n]:
                    break
                coef *= gamma * lam
            adv[t, n] = total
    return adv


# Reward weights written out longhand, independent of ``rewards.RewardWeights``.
_W_LIN, _W_ANG, _W_DROP, _W_RAISE = 1.0, 0.5, -0.05, 0.01
_W_VZ, _W_WXY, _W_POW, _W_ACC, _W_RATE, _W_COLL, _W_H, _W_ORI = -2.0, -0.05, -2e-5, -2.5e-7, -0.01, -0.1, -1.0, -0.2
_H_DES, _K = 0.30, 0.2


def reward_brute_force(s: dict, phi, v_cmd, w_cmd, beta):
    """Scalar straight-line reward for one state."""
    r_v = _W_LIN * math.exp(-4.0 * (v_cmd - s["v_x"]) ** 2) + _W_ANG * math.exp(-4.0 * (w_cmd - s["pitch_rate"]) ** 2)
    r_phi = 0.0
    for i in range(4):
        r_phi += _W_DROP * math.exp(phi[i]) * s["drop_sq"][i]
        r_phi += _W_RAISE * math.exp(-phi[i]) * s["raise_sq"][i]
    power = 0.0
    acc = 0.0
    rate = 0.0
    for j in range(8):
        power += abs(s["torque"][j]) * abs(s["qd"][j])
        acc += s["qacc"][j] ** 2
        rate += (s["action"][j] - s["prev_action"][j]) ** 2
    r_o = (_W_VZ * s["v_z"] ** 2 + _W_WXY * s["pitch_rate"] ** 2 + _W_POW * power + _W_ACC * acc
           + _W_RATE * rate + _W_COLL * s["n_collision"] + _W_H * (_H_DES - s["height"]) ** 2
           + _W_ORI * math.sin(s["pitch"]) ** 2)
    return beta * r_phi + (1 - _K * beta) * r_v + r_o


def random_step_quantities(rng, n):
    return rewards.StepQuantities(
        v_x=rng.normal(0.4, 0.5, n), v_z=rng.normal(0, 0.2, n), pitch=rng.normal(0, 0.2, n),
        pitch_rate=rng.normal(0, 1.0, n), torque=rng.normal(0, 8, (n, 8)), qd=rng.normal(0, 5, (n, 8)),
        qacc=rng.normal(0, 200, (n, 8)), action=rng.normal(0, 0.3, (n, 8)), prev_action=rng.normal(0, 0.3, (n, 8)),
        n_collision=rng.integers(0, 3, n).astype(float), height=rng.uniform(0.2, 0.35, n),
        drop_sq=rng.exponential(0.3, (n, 4)), raise_sq=rng.exponential(0.3, (n, 4)))


def reward_error(weights: rewards.RewardWeights, rng, n=1000):
    q = random_step_quantities(rng, n)
    phi = rng.uniform(0, 1, (n, 4))
    v_cmd = rng.uniform(0, 1, n)
    w_cmd = rng.normal(0, 0.2, n)
    beta = rng.uniform(0, 1, n)
    got = rewards.compute(q, phi, v_cmd, w_cmd, beta, weights).total
    worst = 0.0
    for i in range(n):
        s = {k: (v[i] if np.ndim(v) else v) for k, v in q.as_dict().items()}
        ref = reward_brute_force(s, phi[i], v_cmd[i], w_cmd[i], beta[i])
        worst = max(worst, abs(got[i] - ref) / max(abs(ref), 1e-300))
    return worst


def blend_identity_error(rng, n=200):
    rp, rv, ro = rng.normal(size=(3, n))
    e0 = np.max(np.abs(rewards.blend(rp, rv, ro, 0.0).total - (rv + ro)))
    e1 = np.max(np.abs(rewards.blend(rp, rv, ro, 1.0, 0.2).total - (rp + 0.8 * rv + ro)))
    return float(max(e0, e1))


def run_all(weights: rewards.RewardWeights | None = None, seed: int = 0, gradient_trials: int = 20):
    weights = weights or rewards.RewardWeights()
    rng = np.random.default_rng(seed)
    out = []
    for term in ("est", "fwd", "phase"):
        err = max(estimator_gradient_error(rng, term) for _ in range(gradient_trials))
        out.append(_result(f"gradient estimator L_{term}", err, 1e-4))
    out.append(_result("gradient ppo loss", max(ppo_gradient_error(rng) for _ in range(gradient_trials)), 1e-4))

    worst = 0.0
    for _ in range(10):
        mu = rng.normal(0, 1, 3)
        sigma = rng.uniform(0.3, 2.0, 3)
        est, se = kl_monte_carlo(mu, sigma, rng)
        closed = float(phase.kl_gaussian(mu, 2 * np.log(sigma)))
        worst = max(worst, abs(closed - est) / se)
    out.append(_result("kl closed form vs monte carlo (SE)", worst, 3.0))

    worst = 0.0
    for _ in range(20):
        T, N = rng.integers(1, 11), rng.integers(1, 5)
        r, v = rng.normal(size=(2, T, N))
        d = rng.uniform(size=(T, N)) < 0.2
        lv = rng.normal(size=N)
        g, lam = rng.uniform(0.8, 1.0), rng.uniform(0, 1)
        adv, _ = gae_advantages(r, v, d, lv, g, lam)
        worst = max(worst, float(np.max(np.abs(adv - gae_brute_force(r, v, d, lv, g, lam)))))
    out.append(_result("gae vs direct summation", worst, 1e-12))

    out.append(_result("reward vs scalar oracle (rel)", reward_error(weights, rng), 1e-12))
    out.append(_result("reward blend identities", blend_identity_error(rng), 1e-15))

    out.append(_result("8 dB pressure ratio (rel to 2.512)",
                       abs(10 ** (8 / 20) / 2.512 - 1) + abs(acoustics.spl(2.512 * acoustics.P_REF) - acoustics.spl(acoustics.P_REF) - 8.0) / 8.0,
                       0.01))
    out.append(_result("distance doubling drop (dB vs 6.02)", abs(80.0 - acoustics.attenuate(80.0, 1.0) - 6.02), 0.01))
    out.append(_result("two equal sources (dB vs 3.01)", abs(acoustics.combine_levels([60.0, 60.0]) - 63.01), 0.01))
    idle = acoustics.synthesize_trace([], 10.0)
    out.append(_result("idle floor level (dB vs 55)",
                       max(abs(acoustics.mnl(idle) - 55.0), abs(acoustics.pnl(idle) - 55.0)), 1e-12))
    return out


# ---------------------------------------------------------------------------
# phase estimator on a scripted gait


def synthetic_trot_data(steps: int = 5000, envs: int = 10, speeds=(0.3, 0.8), history: int = 20, seed: int = 0):
    """Scripted-trot rollouts turned into estimator batches.

    ``steps`` control steps are split evenly over ``envs`` parallel robots
    walking at evenly spaced speeds.  Labels come from :func:`phase.label_phases`
    on the recorded contact events.  Returns ``(data, env_index, step_index, legs)``
    with ``data`` holding numpy arrays keyed like an estimator batch and ``legs``
    the raw per-env, per-leg contact events.
    """
    from quietgait import evaluation, sim, terrain

    per_env = steps // envs
    cfg = sim.SimConfig(domain_randomization=False)
    trot = evaluation.TrotController(cfg)
    cfg = trot.joint_config(cfg)
    grounds = [terrain.flat(x_max=per_env * cfg.control_dt * speeds[1] * 1.5 + 10.0) for _ in range(envs)]
    stepper = sim.BatchStepper(cfg, grounds)
    state = sim.reset_batch(cfg, grounds, np.arange(envs) + seed * 1000)
    commands = np.zeros((envs, 3))
    commands[:, 0] = np.linspace(speeds[0], speeds[1], envs)
    trot.reset(state, commands)
    stance0 = state.stance.copy()
    prev = np.zeros((envs, sim.N_JOINTS))
    hist = phase.ObservationHistory(envs, history)
    hist.reset(np.arange(envs), sim.observe(state, commands, prev))
    legs = [[[] for _ in range(sim.N_LEGS)] for _ in range(envs)]
    rec = {k: [] for k in ("history", "vel", "height", "next_obs", "time")}
    x_scan = sim.SCAN_OFFSETS[None, :]
    for _ in range(per_env):
        rec["history"].append(hist.window())
        rec["vel"].append(state.qvel[:, :2].copy())
        h, _ = terrain.height_and_slope(stepper.grid, stepper.x0, stepper.dx, state.qpos[:, 0:1] + x_scan)
        rec["height"].append(h - state.qpos[:, 1:2])
        rec["time"].append(state.time.copy())
        q_des = trot.act(state)
        state, events, diverged = stepper.step(state, q_des)
        if np.any(diverged):
            raise FloatingPointError("scripted trot diverged")
        for ev in events:
            legs[ev.env][ev.leg].append(ev)
        prev = np.clip(q_des - np.asarray(cfg.q_stand), -1.0, 1.0)
        obs = sim.observe(state, commands, prev)
        hist.push(obs)
        rec["next_obs"].append(obs)
    times = np.stack(rec["time"], axis=1)  # (envs, T)
    labels = np.stack([phase.label_phases(legs[i], times[i], 0.0, tuple(bool(b) for b in stance0[i]))
                       for i in range(envs)])
    data = {k: np.swapaxes(np.stack(v), 0, 1).reshape(envs * per_env, *np.stack(v).shape[2:])
            for k, v in rec.items() if k != "time"}
    data["phase"] = labels.reshape(envs * per_env, sim.N_LEGS)
    env_index = np.repeat(np.arange(envs), per_env)
    step_index = np.tile(np.arange(per_env), envs)
    return data, env_index, step_index, legs


def fit_phase_estimator(data, holdout, budget_s: float = 600.0, target: float = 0.1, seed: int = 0,
                        batch_size: int = 256, lr: float = 1e-3, check_every: int = 50):
    """Train a fresh estimator until held-out per-leg phase RMSE drops below ``target``.

    Returns ``(rmse_per_leg, seconds, estimator)``; stops at ``budget_s``.
    """
    import time

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    from quietgait import sim

    off, sc = sim.observation_normalizer(sim.SimConfig())
    model = phase.PhaseEstimator(obs_offset=torch.as_tensor(off, dtype=torch.float32),
                                 obs_scale=torch.as_tensor(sc, dtype=torch.float32))
    opt = phase.make_optimizer(model.parameters(), lr)
    weights = phase.LossWeights()
    tensors = {k: torch.as_tensor(v, dtype=torch.float32) for k, v in data.items()}
    train_idx = torch.as_tensor(np.flatnonzero(~holdout))
    val_hist = np.asarray(data["history"])[holdout]
    val_phase = np.asarray(data["phase"])[holdout]
    start = time.perf_counter()
    step = 0
    rmse = np.full(phase.N_LEGS, np.inf)
    while True:
        idx = train_idx[torch.randint(len(train_idx), (batch_size,), generator=gen)]
        part = {k: v[idx] for k, v in tensors.items()}
        losses = phase.estimator_losses(model, part, weights, torch.randn(batch_size, model.latent, generator=gen))
        opt.zero_grad()
        losses["total"].backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        step += 1
        elapsed = time.perf_counter() - start
        if step % check_every == 0 or elapsed > budget_s:
            _, _, pred, _ = model.estimate(val_hist)
            rmse = phase.phase_rmse(pred, val_phase)
            if np.all(rmse < target) or elapsed > budget_s:
                return rmse, elapsed, model
