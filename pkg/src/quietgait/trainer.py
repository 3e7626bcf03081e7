"""PPO with GAE, asymmetric actor-critic, quiet-factor sampling and a terrain curriculum."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from quietgait import acoustics, checkpoint, phase, rewards
from quietgait import sim
from quietgait import terrain as terrain_mod
from quietgait.policy import ActorCritic, PrivilegedState, action_to_targets, actor_input, critic_input, default_dims

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    num_envs: int = 64
    # PPO iterations; the published "episodes" count is read as iterations.
    iterations: int = 1000
    steps: int = 48
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.005
    value_coef: float = 1.0
    epochs: int = 5
    minibatches: int = 4
    lr: float = 1e-3
    # "adaptive" rescales lr after every minibatch to hold KL near desired_kl
    lr_schedule: str = "adaptive"
    desired_kl: float = 0.01
    estimator_lr: float = 1e-3
    max_grad_norm: float = 1.0
    target_kl: float = 0.05
    episode_length_s: float = 20.0
    history_length: int = 20
    latent_dim: int = 16
    estimator_hidden: int = 64
    hidden: int = 128
    layers: int = 3
    init_std: float = 0.25
    max_level: int = 4
    promote_threshold: float = 0.8
    demote_threshold: float = 0.4
    curriculum_window: int = 10
    command_max: tuple = (0.8, 1.0, 1.0, 1.0, 1.0)
    zero_command_prob: float = 0.1
    fall_height: float = 0.15
    fall_pitch: float = 1.0
    checkpoint_interval: int = 50
    # light mass/friction randomisation of the training simulator (unit tests and evaluation set their own)
    domain_randomization: bool = True
    # phase fed to the noise reward: simulator labels ("truth") or the estimator's output ("estimate")
    reward_phase_source: str = "truth"
    seed: int = 0

    def __post_init__(self):
        self.command_max = tuple(float(v) for v in self.command_max)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.num_envs < 1:
            raise ValueError("num_envs must be at least 1")
        if len(self.command_max) != self.max_level + 1:
            raise ValueError("command_max needs one entry per curriculum level")
        if self.lr_schedule not in ("fixed", "adaptive"):
            raise ValueError("lr_schedule must be 'fixed' or 'adaptive'")
        if self.reward_phase_source not in ("truth", "estimate"):
            raise ValueError("reward_phase_source must be 'truth' or 'estimate'")
        if self.steps * self.num_envs < self.minibatches:
            raise ValueError("batch smaller than the number of minibatches")

    @classmethod
    def paper_scale(cls, **kw):
        return cls(**{"num_envs": 4096, "iterations": 6000, **kw})

    @classmethod
    def desk(cls, **kw):
        """Profile behind the committed checkpoint: about 1.5 h on one CPU core."""
        return cls(**{"iterations": 5000, "checkpoint_interval": 250, **kw})

    @classmethod
    def smoke(cls, **kw):
        return cls(**{"num_envs": 8, "iterations": 20, "steps": 24, "checkpoint_interval": 10, **kw})


def sample_beta(rng: np.random.Generator, size=None):
    return rng.uniform(0.0, 1.0, size)


# ---------------------------------------------------------------------------
# environments


class VecEnv:
    """A batch of simulated robots with commands, histories and episode logs."""

    def __init__(self, sim_cfg: sim.SimConfig, cfg: TrainConfig, rng: np.random.Generator, level: int = 0):
        self.sim_cfg = sim_cfg
        self.cfg = cfg
        self.rng = rng
        self.level = level
        self.n = cfg.num_envs
        self.max_steps = int(round(cfg.episode_length_s / sim_cfg.control_dt))
        terrains = [terrain_mod.for_level(level, rng) for _ in range(self.n)]
        self.stepper = sim.BatchStepper(sim_cfg, terrains)
        self.state = sim.reset_batch(sim_cfg, terrains, rng.integers(0, 2**31, self.n))
        self.obs_offset, self.obs_scale = sim.observation_normalizer(sim_cfg)
        self.commands = np.zeros((self.n, 3))
        self.prev_action = np.zeros((self.n, sim.N_JOINTS))
        self.history = phase.ObservationHistory(self.n, cfg.history_length)
        self.ep_id = np.zeros(self.n, np.int64)
        self.ep_len = np.zeros(self.n, np.int64)
        self.ep_return = np.zeros(self.n)
        self.episodes = {}  # id -> (per-leg events, initial stance)
        self._next_id = 0
        self.finished = []  # (beta, return, length, fell)
        self.reset_envs(np.arange(self.n), fresh=False)

    def _sample_commands(self, ids):
        k = len(ids)
        vmax = self.cfg.command_max[self.level]
        v = self.rng.uniform(0.0, vmax, k)
        v[self.rng.uniform(size=k) < self.cfg.zero_command_prob] = 0.0
        self.commands[ids, 0] = v
        self.commands[ids, 1] = 0.0
        self.commands[ids, 2] = sample_beta(self.rng, k)

    def reset_envs(self, ids, fresh=True):
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return
        if fresh:
            new_t = [terrain_mod.for_level(self.level, self.rng) for _ in ids]
            for i, t in zip(ids, new_t):
                self.stepper.set_terrain(int(i), t)
            sub = sim.reset_batch(self.sim_cfg, new_t, self.rng.integers(0, 2**31, len(ids)))
            for f in dataclasses.fields(sub):
                v = getattr(sub, f.name)
                if isinstance(v, np.ndarray):
                    getattr(self.state, f.name)[ids] = v
        self._sample_commands(ids)
        self.prev_action[ids] = 0.0
        self.ep_len[ids] = 0
        self.ep_return[ids] = 0.0
        for i in ids:
            self.ep_id[i] = self._next_id
            self.episodes[self._next_id] = ([[] for _ in range(sim.N_LEGS)], self.state.stance[i].copy())
            self._next_id += 1
        obs = sim.observe(self.state.select(ids), self.commands[ids], self.prev_action[ids])
        self.history.reset(ids, obs)

    def observe(self):
        return sim.observe(self.state, self.commands, self.prev_action)

    def privileged_static(self, state=None):
        """True height scan, body velocity and contact flags (phase is added later)."""
        s = self.state if state is None else state
        x = s.qpos[:, 0:1] + sim.SCAN_OFFSETS[None, :]
        h, _ = terrain_mod.height_and_slope(self.stepper.grid, self.stepper.x0, self.stepper.dx, x)
        scan = h - s.qpos[:, 1:2]
        return scan, s.qvel[:, :2].copy(), s.stance.astype(float)

    def trunk_height(self, state=None):
        s = self.state if state is None else state
        h, _ = terrain_mod.height_and_slope(self.stepper.grid, self.stepper.x0, self.stepper.dx, s.qpos[:, 0:1])
        return s.qpos[:, 1] - h[:, 0]

    def phase_at(self, ep_ids, times):
        """Hindsight phase labels for (episode id, env-local time) pairs, shape (len, 4)."""
        ep_ids = np.asarray(ep_ids)
        times = np.asarray(times, dtype=float)
        out = np.zeros((len(ep_ids), sim.N_LEGS))
        for e in np.unique(ep_ids):
            sel = ep_ids == e
            legs, stance0 = self.episodes[int(e)]
            out[sel] = phase.label_phases(legs, times[sel], 0.0, tuple(bool(b) for b in stance0))
        return out

    def prune(self, keep):
        keep = set(int(k) for k in keep) | set(int(k) for k in self.ep_id)
        for k in list(self.episodes):
            if k not in keep:
                del self.episodes[k]


@dataclass
class RolloutBatch:
    obs: np.ndarray  # (T, N, 30)
    history: np.ndarray  # (T, N, H, 30)
    next_obs: np.ndarray
    actor_in: np.ndarray
    critic_in: np.ndarray
    actions: np.ndarray  # executed (clipped)
    raw_actions: np.ndarray
    log_probs: np.ndarray
    old_mean: np.ndarray
    rewards: np.ndarray
    r_phase: np.ndarray
    r_task: np.ndarray
    r_other: np.ndarray
    beta: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    timeouts: np.ndarray
    valid: np.ndarray
    last_values: np.ndarray
    vel: np.ndarray
    height: np.ndarray
    phase: np.ndarray
    terms: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    episodes: list = field(default_factory=list)

    def __len__(self):
        return self.rewards.shape[0]


def _estimate(estimator, window, with_phase=False):
    v, h, phi, z = estimator.estimate(window)
    return (v, h, z, phi) if with_phase else (v, h, z)


def collect_rollouts(env: VecEnv, estimator: phase.PhaseEstimator, ac: ActorCritic, cfg: TrainConfig,
                     weights: rewards.RewardWeights | None = None,
                     generator: torch.Generator | None = None) -> RolloutBatch:
    weights = weights or rewards.RewardWeights()
    T, N = cfg.steps, env.n
    sc = env.sim_cfg
    H = cfg.history_length
    D = sim.OBS_DIM
    A = default_dims(cfg.latent_dim)[0]
    buf = {k: np.zeros((T, N) + s) for k, s in {
        "obs": (D,), "next_obs": (D,), "actor_in": (A,), "post_actor_in": (A,), "raw": (sim.N_JOINTS,),
        "act": (sim.N_JOINTS,), "mean": (sim.N_JOINTS,), "logp": (), "scan": (11,), "vel": (2,), "contact": (4,),
        "post_scan": (11,), "post_vel": (2,), "post_contact": (4,), "phase_hat": (4,), "t_pre": (), "t_post": (),
        "beta": (), "v_cmd": (), "w_cmd": ()}.items()}
    hist = np.zeros((T, N, H, D))
    ep_pre = np.zeros((T, N), np.int64)
    ep_post = np.zeros((T, N), np.int64)
    dones = np.zeros((T, N), bool)
    timeouts = np.zeros((T, N), bool)
    valid = np.ones((T, N), bool)
    quantities = []
    events_all = []
    finished = []

    window = env.history.window()
    v_hat, h_hat, z = _estimate(estimator, window)
    cur_in = actor_input(env.observe(), h_hat, v_hat, z, env.obs_offset, env.obs_scale)
    for t in range(T):
        obs = env.observe()
        buf["obs"][t] = obs
        hist[t] = window
        buf["actor_in"][t] = cur_in
        buf["scan"][t], buf["vel"][t], buf["contact"][t] = env.privileged_static()
        buf["t_pre"][t] = env.state.time
        ep_pre[t] = env.ep_id
        buf["beta"][t] = env.commands[:, 2]
        buf["v_cmd"][t] = env.commands[:, 0]
        buf["w_cmd"][t] = env.commands[:, 1]

        out = ac.act(cur_in, "sample", generator)
        with torch.no_grad():
            buf["mean"][t] = ac.actor(torch.as_tensor(cur_in, dtype=ac.log_std.dtype)).numpy()
        buf["raw"][t], buf["act"][t], buf["logp"][t] = out.raw, out.action, out.log_prob
        q_des = action_to_targets(out.action, sc.q_stand, sc)
        new_state, events, diverged = env.stepper.step(env.state, q_des)
        env.state = new_state
        for ev in events:
            env.episodes[int(env.ep_id[ev.env])][0][ev.leg].append(ev)
        events_all.append(events)

        quantities.append(rewards.StepQuantities.from_state(new_state, env.trunk_height(), out.action,
                                                            env.prev_action.copy()))
        env.prev_action = out.action.copy()
        nobs = env.observe()
        buf["next_obs"][t] = nobs
        env.history.push(nobs)
        buf["t_post"][t] = new_state.time
        ep_post[t] = env.ep_id
        buf["post_scan"][t], buf["post_vel"][t], buf["post_contact"][t] = env.privileged_static()

        env.ep_len += 1
        bad = diverged | ~np.all(np.isfinite(nobs), axis=1)
        fell = (env.trunk_height() < cfg.fall_height) | (np.abs(new_state.qpos[:, 2]) > cfg.fall_pitch)
        fell = np.where(bad, True, fell)
        timeout = (env.ep_len >= env.max_steps) & ~fell
        done = fell | timeout
        dones[t], timeouts[t], valid[t] = done, timeout, ~bad
        if np.any(bad):
            log.warning("simulation diverged in %d environment(s); resetting", int(bad.sum()))
            # keep non-finite numbers out of the networks
            env.history.buffer[bad] = 0.0
            buf["next_obs"][t][bad] = 0.0
            buf["post_scan"][t][bad] = 0.0
            buf["post_vel"][t][bad] = 0.0

        window = env.history.window()
        v_hat, h_hat, z, buf["phase_hat"][t] = _estimate(estimator, window, with_phase=True)
        post_in = actor_input(np.nan_to_num(nobs), h_hat, v_hat, z, env.obs_offset, env.obs_scale)
        buf["post_actor_in"][t] = post_in
        cur_in = post_in
        ids = np.flatnonzero(done)
        if len(ids):
            for i in ids:
                finished.append((float(env.commands[i, 2]), int(env.ep_id[i]), int(env.ep_len[i]), bool(fell[i])))
            env.reset_envs(ids)
            window = env.history.window()
            v_hat, h_hat, z = _estimate(estimator, window[ids])
            cur_in[ids] = actor_input(env.observe()[ids], h_hat, v_hat, z, env.obs_offset, env.obs_scale)

    # hindsight phase labels
    phase_pre = env.phase_at(ep_pre.ravel(), buf["t_pre"].ravel()).reshape(T, N, 4)
    phase_post = env.phase_at(ep_post.ravel(), buf["t_post"].ravel()).reshape(T, N, 4)

    q_all = rewards.StepQuantities(**{
        k: np.stack([getattr(q, k) for q in quantities]) for k in quantities[0].as_dict()})
    for k, v in q_all.as_dict().items():
        v = np.asarray(v, dtype=float)
        v[~valid] = 0.0
        setattr(q_all, k, v)
    phase_reward = phase_post if cfg.reward_phase_source == "truth" else buf["phase_hat"]
    rb = rewards.compute(q_all, phase_reward, buf["v_cmd"], buf["w_cmd"], buf["beta"], weights)
    total = np.where(valid, rb.total, 0.0)

    priv = PrivilegedState(buf["scan"], buf["vel"], buf["contact"], phase_pre)
    c_in = critic_input(buf["actor_in"], priv)
    values = ac.values(c_in.reshape(T * N, -1)).reshape(T, N)
    # legged-gym style bootstrap at time limits
    if np.any(timeouts):
        post_priv = PrivilegedState(buf["post_scan"][timeouts], buf["post_vel"][timeouts],
                                    buf["post_contact"][timeouts], phase_post[timeouts])
        v_term = ac.values(critic_input(buf["post_actor_in"][timeouts], post_priv))
        total = total.copy()
        total[timeouts] += cfg.gamma * v_term
    scan, vel, contact = env.privileged_static()
    last_priv = PrivilegedState(scan, vel, contact, env.phase_at(env.ep_id, env.state.time))
    last_values = ac.values(critic_input(cur_in, last_priv))

    episodes = [dict(zip(("beta", "episode", "length", "fell"), f)) for f in finished]
    env.finished.extend(episodes)
    env.prune([])

    return RolloutBatch(
        obs=buf["obs"], history=hist, next_obs=buf["next_obs"], actor_in=buf["actor_in"], critic_in=c_in,
        actions=buf["act"], raw_actions=buf["raw"], log_probs=buf["logp"], old_mean=buf["mean"],
        rewards=total, r_phase=rb.r_phase, r_task=rb.r_task, r_other=rb.r_other, beta=buf["beta"],
        values=values, dones=dones, timeouts=timeouts, valid=valid, last_values=last_values,
        vel=buf["vel"], height=buf["scan"], phase=phase_pre, terms=rb.terms,
        events=_rebase_events(events_all, buf["t_pre"], sc.control_dt),
        episodes=episodes)


def _rebase_events(events_per_step, t_pre, control_dt):
    """Events with times measured from the start of the rollout (for noise metrics)."""
    out = []
    for t, evs in enumerate(events_per_step):
        for ev in evs:
            out.append(sim.ContactEvent(ev.leg, ev.kind, t * control_dt + (ev.time - t_pre[t, ev.env]),
                                        ev.impact_velocity, ev.material, ev.env))
    return out


# ---------------------------------------------------------------------------
# learning


def gae_advantages(rewards_, values, dones, last_values, gamma=0.99, lam=0.95):
    """Generalized advantage estimates and returns for (T, N) arrays."""
    rewards_ = np.asarray(rewards_, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards_.shape[0]
    adv = np.zeros_like(rewards_)
    last = np.zeros_like(rewards_[0])
    for t in reversed(range(T)):
        nxt = last_values if t == T - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards_[t] + gamma * nxt * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    return (adv - adv.mean()) / (adv.std() + 1e-12)


def ppo_losses(ac: ActorCritic, actor_in, critic_in, raw, old_logp, adv, returns, clip, entropy_coef, value_coef):
    """Clipped surrogate, value MSE and entropy for one minibatch (torch tensors)."""
    dist = ac.distribution(actor_in)
    logp = dist.log_prob(raw).sum(-1)
    ratio = torch.exp(logp - old_logp)
    surr = torch.min(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)
    policy_loss = -surr.mean()
    value_loss = torch.mean((ac.value(critic_in) - returns) ** 2)
    entropy = dist.entropy().sum(-1).mean()
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy
    clip_frac = torch.mean((torch.abs(ratio - 1.0) > clip).to(ratio.dtype))
    return {"total": total, "policy": policy_loss, "value": value_loss, "entropy": entropy, "clip_frac": clip_frac,
            "ratio": ratio}


def gaussian_kl(mu0, std0, mu1, std1):
    """KL(N0 || N1) for diagonal Gaussians, summed over the last axis."""
    return torch.sum(torch.log(std1 / std0) + (std0 ** 2 + (mu0 - mu1) ** 2) / (2 * std1 ** 2) - 0.5, dim=-1)


def ppo_update(batch: RolloutBatch, ac: ActorCritic, optimizer, cfg: TrainConfig,
               generator: torch.Generator | None = None) -> dict:
    adv, returns = gae_advantages(batch.rewards, batch.values, batch.dones, batch.last_values, cfg.gamma, cfg.lam)
    adv = normalize_advantages(adv)
    dt = ac.log_std.dtype
    flat = lambda a: torch.as_tensor(np.asarray(a).reshape(-1, *np.asarray(a).shape[2:]), dtype=dt)
    actor_in, critic_in = flat(batch.actor_in), flat(batch.critic_in)
    raw, old_logp = flat(batch.raw_actions), flat(batch.log_probs)
    old_mean = flat(batch.old_mean)
    adv_t, ret_t = flat(adv), flat(returns)
    with torch.no_grad():
        old_std = ac.std().clone()
    n = actor_in.shape[0]
    mb = n // cfg.minibatches
    stats = {"policy": [], "value": [], "entropy": [], "clip_frac": []}
    kl = 0.0
    stopped = False
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=generator)
        for k in range(cfg.minibatches):
            idx = perm[k * mb:(k + 1) * mb]
            losses = ppo_losses(ac, actor_in[idx], critic_in[idx], raw[idx], old_logp[idx], adv_t[idx], ret_t[idx],
                                cfg.clip, cfg.entropy_coef, cfg.value_coef)
            if not torch.isfinite(losses["total"]):
                raise FloatingPointError("non-finite PPO loss")
            if cfg.lr_schedule == "adaptive":
                with torch.no_grad():
                    mb_kl = float(gaussian_kl(old_mean[idx], old_std, ac.actor(actor_in[idx]), ac.std()).mean())
                for g in optimizer.param_groups:
                    if mb_kl > 2.0 * cfg.desired_kl:
                        g["lr"] = max(1e-5, g["lr"] / 1.5)
                    elif 0.0 < mb_kl < 0.5 * cfg.desired_kl:
                        g["lr"] = min(1e-2, g["lr"] * 1.5)
            optimizer.zero_grad()
            losses["total"].backward()
            torch.nn.utils.clip_grad_norm_(ac.parameters(), cfg.max_grad_norm)
            optimizer.step()
            if not all(bool(torch.all(torch.isfinite(p))) for p in ac.parameters()):
                raise FloatingPointError("non-finite actor-critic parameters after PPO step")
            for key in stats:
                stats[key].append(float(losses[key].detach()))
        with torch.no_grad():
            kl = float(gaussian_kl(old_mean, old_std, ac.actor(actor_in), ac.std()).mean())
        if kl > cfg.target_kl:
            log.warning("policy KL %.4f exceeded %.3f; stopping epochs early", kl, cfg.target_kl)
            stopped = True
            break
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out.update(kl=kl, early_stop=stopped, adv_mean=float(adv.mean()), adv_std=float(adv.std()),
               std=float(ac.std().mean().detach()), lr=float(optimizer.param_groups[0]["lr"]))
    return out


def estimator_batch(batch: RolloutBatch, dtype=torch.float32) -> dict:
    mask = batch.valid.reshape(-1)

    def flat(a):
        a = np.asarray(a)
        return torch.as_tensor(a.reshape(-1, *a.shape[2:])[mask], dtype=dtype)

    return {"history": flat(batch.history), "vel": flat(batch.vel), "height": flat(batch.height),
            "phase": flat(batch.phase), "next_obs": flat(batch.next_obs)}


def estimator_update(estimator, optimizer, data: dict, weights: phase.LossWeights, minibatches: int,
                     generator: torch.Generator | None = None) -> dict:
    n = data["history"].shape[0]
    perm = torch.randperm(n, generator=generator)
    mb = max(1, n // minibatches)
    acc = {}
    for k in range(minibatches):
        idx = perm[k * mb:(k + 1) * mb]
        part = {key: v[idx] for key, v in data.items()}
        noise = torch.randn(len(idx), estimator.latent, generator=generator)
        losses = phase.estimator_losses(estimator, part, weights, noise)
        if not torch.isfinite(losses["total"]):
            raise FloatingPointError("non-finite estimator loss")
        optimizer.zero_grad()
        losses["total"].backward()
        torch.nn.utils.clip_grad_norm_(estimator.parameters(), 1.0)
        optimizer.step()
        for key, v in losses.items():
            acc.setdefault(key, []).append(float(v.detach()))
    estimator.check_finite()
    return {f"est_{k}": float(np.mean(v)) for k, v in acc.items()}


def curriculum_step(stats, level: int, cfg: TrainConfig | None = None) -> int:
    """Move one level up or down from the windowed mean tracking ratio.

    ``stats`` is a sequence of per-iteration tracking rewards already divided
    by their maximum; the decision waits until the window is full.
    """
    cfg = cfg or TrainConfig()
    if not 0 <= level <= cfg.max_level:
        raise ValueError(f"curriculum level {level} outside [0, {cfg.max_level}]")
    stats = list(stats)[-cfg.curriculum_window:]
    if len(stats) < cfg.curriculum_window:
        return level
    mean = float(np.mean(stats))
    if mean > cfg.promote_threshold:
        return min(level + 1, cfg.max_level)
    if mean < cfg.demote_threshold:
        return max(level - 1, 0)
    return level


# ---------------------------------------------------------------------------
# driver


def build_models(cfg: TrainConfig, sim_cfg: sim.SimConfig):
    offset, scale = sim.observation_normalizer(sim_cfg)
    estimator = phase.PhaseEstimator(hidden=cfg.estimator_hidden, latent=cfg.latent_dim,
                                     obs_offset=offset, obs_scale=scale)
    a_dim, c_dim = default_dims(cfg.latent_dim)
    ac = ActorCritic(a_dim, c_dim, hidden=cfg.hidden, layers=cfg.layers, init_std=cfg.init_std)
    return estimator, ac


def _config_dict(obj):
    d = dataclasses.asdict(obj)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def save_checkpoint(path, estimator, ac, cfg: TrainConfig, sim_cfg: sim.SimConfig, extra=None, deploy=False):
    arrays = checkpoint.module_arrays("estimator", estimator)
    if deploy:
        arrays.update(checkpoint.module_arrays("actor", ac.actor))
    else:
        arrays.update(checkpoint.module_arrays("ac", ac))
    meta = {"kind": "deploy" if deploy else "train", "train_config": _config_dict(cfg),
            "sim_config": _config_dict(sim_cfg), **(extra or {})}
    return checkpoint.save_arrays(path, arrays, meta)


def load_checkpoint(path):
    """Rebuild ``(estimator, actor_critic, metadata)`` from a training checkpoint."""
    arrays, meta = checkpoint.load_arrays(path)
    if meta.get("kind") != "train":
        raise checkpoint.CheckpointError(f"{path}: not a training checkpoint")
    cfg = TrainConfig(**meta["train_config"])
    sim_cfg = sim.SimConfig(**meta["sim_config"])
    estimator, ac = build_models(cfg, sim_cfg)
    checkpoint.load_module("estimator", estimator, arrays)
    checkpoint.load_module("ac", ac, arrays)
    return estimator, ac, meta


def rollout_noise(batch: RolloutBatch, n_envs: int, duration: float, gains=None):
    """Mean MNL over environments for quiet (beta >= 0.5) and loud halves of a rollout."""
    cfg = acoustics.AcousticConfig(gains=dict(gains or acoustics.DEFAULT_GAINS))
    per_env = [[] for _ in range(n_envs)]
    for ev in batch.events:
        per_env[ev.env].append(ev)
    levels = np.array([acoustics.mnl(acoustics.synthesize_trace(e, duration, cfg)) for e in per_env])
    beta = batch.beta[0]
    quiet = beta >= 0.5
    return (float(levels[quiet].mean()) if quiet.any() else math.nan,
            float(levels[~quiet].mean()) if (~quiet).any() else math.nan)


def train(cfg: TrainConfig, out_dir, sim_cfg: sim.SimConfig | None = None,
          reward_weights: rewards.RewardWeights | None = None, loss_weights: phase.LossWeights | None = None,
          progress=None) -> Path:
    """Run PPO; writes ``metrics.jsonl``, periodic ``ckpt_*.qgc`` and ``final.qgc``. Returns the final path."""
    sim_cfg = dataclasses.replace(sim_cfg or sim.SimConfig(), domain_randomization=cfg.domain_randomization)
    reward_weights = reward_weights or rewards.RewardWeights()
    loss_weights = loss_weights or phase.LossWeights()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    estimator, ac = build_models(cfg, sim_cfg)
    opt = torch.optim.Adam(ac.parameters(), lr=cfg.lr)
    est_opt = phase.make_optimizer(estimator.parameters(), cfg.estimator_lr)
    env = VecEnv(sim_cfg, cfg, rng)
    level = 0
    track_hist = []
    max_track = reward_weights.lin_track + reward_weights.ang_track
    duration = cfg.steps * sim_cfg.control_dt
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")
    t0 = time.perf_counter()
    last_ckpt = None
    with metrics_path.open("a") as mf:
        for it in range(cfg.iterations):
            try:
                batch = collect_rollouts(env, estimator, ac, cfg, reward_weights, gen)
                stats = ppo_update(batch, ac, opt, cfg, gen)
                est_stats = estimator_update(estimator, est_opt, estimator_batch(batch), loss_weights,
                                             cfg.minibatches, gen)
            except FloatingPointError:
                log.error("numeric failure at iteration %d; last checkpoint %s kept", it, last_ckpt)
                raise
            with torch.no_grad():
                data = estimator_batch(batch)
                pred = estimator(data["history"])["phase"].numpy()
            rmse = phase.phase_rmse(pred, data["phase"].numpy())
            track_hist.append(float(np.mean(batch.r_task[batch.valid])) / max_track)
            new_level = curriculum_step(track_hist, level, cfg)
            if new_level != level:
                level = new_level
                env.level = level
                track_hist = []
            mnl_quiet, mnl_loud = rollout_noise(batch, env.n, duration)
            rec = {
                "iteration": it,
                "reward": float(batch.rewards.mean()),
                "r_phase": float(batch.r_phase.mean()),
                "r_task": float(batch.r_task.mean()),
                "r_other": float(batch.r_other.mean()),
                **{f"term_{k}": float(np.mean(v)) for k, v in batch.terms.items()},
                **stats, **est_stats,
                "phase_rmse": [float(x) for x in rmse],
                "level": level,
                "episodes": len(batch.episodes),
                "falls": int(sum(e["fell"] for e in batch.episodes)),
                "mnl_quiet": mnl_quiet,
                "mnl_loud": mnl_loud,
                "wall_time": time.perf_counter() - t0,
            }
            mf.write(json.dumps(rec, allow_nan=True) + "\n")
            mf.flush()
            if progress is not None:
                progress(rec)
            if (it + 1) % cfg.checkpoint_interval == 0:
                last_ckpt = save_checkpoint(out / f"ckpt_{it + 1:05d}.qgc", estimator, ac, cfg, sim_cfg,
                                            {"iteration": it + 1, "level": level})
    final = save_checkpoint(out / "final.qgc", estimator, ac, cfg, sim_cfg,
                            {"iteration": cfg.iterations, "level": level})
    save_checkpoint(out / "deploy.qgc", estimator, ac, cfg, sim_cfg, {"iteration": cfg.iterations}, deploy=True)
    return final
