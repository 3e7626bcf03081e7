"""Gait phase labels and the history-based state estimator.

Phase runs 0 -> 1 linearly over a swing (lift-off to touchdown) and 1 -> 0
over a stance (touchdown to lift-off).  The estimator encodes an observation
history with a recurrent cell into a Gaussian latent, decodes the next
observation from a sample of it, regresses body velocity and a height scan,
and feeds ``[h_hat, v_hat, z]`` to a phase head squashed into (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from quietgait.sim import OBS_DIM, SCAN_OFFSETS

N_LEGS = 4


# ---------------------------------------------------------------------------
# ground-truth labels


def _leg_anchors(events, start_time, initial_stance):
    times = [start_time]
    values = [1.0 if initial_stance else 0.0]
    for ev in events:
        kind = ev.kind if hasattr(ev, "kind") else ev[1]
        t = ev.time if hasattr(ev, "time") else ev[0]
        v = 1.0 if kind == "touchdown" else 0.0
        if v == values[-1]:
            raise ValueError(f"contact events must alternate; got two {kind} events in a row at t={t}")
        if t < times[-1]:
            raise ValueError("contact events must be time-ordered")
        times.append(float(t))
        values.append(v)
    return np.array(times), np.array(values)


def leg_phase(events, t, start_time=0.0, initial_stance=True, nominal_swing=0.25, nominal_stance=0.25):
    """Phase of one leg at time(s) ``t``.

    The episode start counts as a touchdown (or lift-off if the leg starts in
    the air).  Closed segments are linear between their events; the last,
    still-open segment advances at the rate of the previous segment of the same
    kind (or the nominal duration) and holds once it reaches 0 or 1.
    """
    times, values = _leg_anchors(events, start_time, initial_stance)
    t = np.asarray(t, dtype=float)
    idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
    out = np.empty_like(t)
    closed = idx < len(times) - 1
    i = idx[closed]
    span = times[i + 1] - times[i]
    frac = np.where(span > 0, (t[closed] - times[i]) / np.where(span > 0, span, 1.0), 1.0)
    frac = np.clip(frac, 0.0, 1.0)
    out[closed] = values[i] + frac * (values[i + 1] - values[i])

    last = len(times) - 1
    rising = values[last] == 0.0
    duration = nominal_swing if rising else nominal_stance
    # previous segment of the same kind starts two anchors back
    if last >= 2:
        duration = times[last - 1] - times[last - 2]
    duration = max(duration, 1e-6)
    dt = np.clip(t[~closed] - times[last], 0.0, None)
    out[~closed] = np.clip(dt / duration if rising else 1.0 - dt / duration, 0.0, 1.0)
    before = t < times[0]
    out[before] = values[0]
    return out


def label_phases(events, t, start_time=0.0, initial_stance=(True,) * N_LEGS, **nominal):
    """Ground-truth phase vector at ``t``.

    ``events`` is a sequence of four per-leg event sequences (ContactEvent or
    ``(time, kind)`` tuples).  Returns shape (4,) for scalar ``t`` and (T, 4)
    for an array.
    """
    if len(events) != N_LEGS:
        raise ValueError("label_phases needs one event sequence per leg")
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.stack([leg_phase(events[i], t_arr, start_time, initial_stance[i], **nominal)
                    for i in range(N_LEGS)], axis=-1)
    return out[0] if np.ndim(t) == 0 else out


def split_by_leg(events):
    legs = [[] for _ in range(N_LEGS)]
    for ev in events:
        legs[ev.leg].append(ev)
    return legs


# ---------------------------------------------------------------------------
# observation history


class ObservationHistory:
    """Fixed-capacity window of the last ``H`` observations per environment."""

    def __init__(self, num_envs: int, length: int = 20, obs_dim: int = OBS_DIM):
        self.length = length
        self.buffer = np.zeros((num_envs, length, obs_dim))

    def reset(self, env_ids, obs):
        # pre-fill with the reset observation
        self.buffer[env_ids] = np.asarray(obs)[:, None, :]

    def push(self, obs):
        self.buffer[:, :-1] = self.buffer[:, 1:]
        self.buffer[:, -1] = obs

    def window(self) -> np.ndarray:
        return self.buffer.copy()


# ---------------------------------------------------------------------------
# estimator


@dataclass
class LossWeights:
    fwd: float = 1.0
    phase: float = 1.0
    kl: float = 0.01

    def __post_init__(self):
        if min(self.fwd, self.phase, self.kl) < 0:
            raise ValueError("loss weights must be non-negative")


def _mlp(n_in, hidden, n_out, layers=2, act=nn.Tanh):
    mods = []
    width = n_in
    for _ in range(layers - 1):
        mods += [nn.Linear(width, hidden), act()]
        width = hidden
    mods.append(nn.Linear(width, n_out))
    return nn.Sequential(*mods)


class PhaseEstimator(nn.Module):
    def __init__(self, obs_dim=OBS_DIM, hidden=64, latent=16, scan_dim=len(SCAN_OFFSETS), vel_dim=2,
                 head_hidden=64, obs_offset=None, obs_scale=None):
        super().__init__()
        self.obs_dim = obs_dim
        self.latent = latent
        self.rnn = nn.LSTM(obs_dim, hidden, batch_first=True)
        self.mu = nn.Linear(hidden, latent)
        self.logvar = nn.Linear(hidden, latent)
        self.decoder = _mlp(latent, head_hidden, obs_dim)
        self.vel_head = _mlp(hidden, head_hidden, vel_dim)
        self.height_head = _mlp(hidden, head_hidden, scan_dim)
        self.phase_head = _mlp(scan_dim + vel_dim + latent, head_hidden, N_LEGS)
        off = torch.zeros(obs_dim) if obs_offset is None else torch.as_tensor(obs_offset)
        sc = torch.ones(obs_dim) if obs_scale is None else torch.as_tensor(obs_scale)
        self.register_buffer("obs_offset", off.to(torch.get_default_dtype()))
        self.register_buffer("obs_scale", sc.to(torch.get_default_dtype()))

    def normalize(self, obs):
        return (obs - self.obs_offset) * self.obs_scale

    def encode(self, history, noise=None):
        """Returns ``(z, mu, logvar, hidden)``; ``z = mu`` unless ``noise`` is given."""
        x = self.normalize(history)
        out, _ = self.rnn(x)
        hidden = out[:, -1]
        mu = self.mu(hidden)
        logvar = self.logvar(hidden)
        z = mu if noise is None else mu + torch.exp(0.5 * logvar) * noise
        return z, mu, logvar, hidden

    def forward(self, history, noise=None):
        z, mu, logvar, hidden = self.encode(history, noise)
        vel = self.vel_head(hidden)
        height = self.height_head(hidden)
        logits = self.phase_head(torch.cat([height, vel, z], dim=-1))
        return {"vel": vel, "height": height, "phase": torch.sigmoid(logits), "z": z, "mu": mu,
                "logvar": logvar, "next_obs": self.decoder(z)}

    @torch.no_grad()
    def estimate(self, history):
        """Deterministic inference: ``(v_hat, h_hat, phi_hat, z)`` as numpy arrays."""
        h = torch.as_tensor(np.asarray(history), dtype=self.mu.weight.dtype)
        out = self.forward(h)
        return tuple(out[k].numpy().astype(np.float64) for k in ("vel", "height", "phase", "z"))

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.all(torch.isfinite(p)):
                raise FloatingPointError(f"non-finite estimator parameter {name}")


def kl_gaussian(mu, logvar):
    """KL(N(mu, diag exp(logvar)) || N(0, I)) summed over the last axis."""
    if isinstance(mu, torch.Tensor):
        return 0.5 * torch.sum(torch.exp(logvar) + mu ** 2 - 1.0 - logvar, dim=-1)
    mu = np.asarray(mu, dtype=float)
    logvar = np.asarray(logvar, dtype=float)
    return 0.5 * np.sum(np.exp(logvar) + mu ** 2 - 1.0 - logvar, axis=-1)


def _mse(a, b):
    return torch.mean((a - b) ** 2)


def estimator_losses(model: PhaseEstimator, batch: dict, weights: LossWeights, noise=None):
    """Component losses for a batch dict with keys history, vel, height, phase, next_obs.

    ``noise`` is the reparameterization draw; pass zeros for a deterministic
    latent.  Returns a dict of scalar tensors including ``total``.
    """
    hist = batch["history"]
    n = hist.shape[0]
    for key, width in (("vel", None), ("height", None), ("phase", N_LEGS), ("next_obs", model.obs_dim)):
        if batch[key].shape[0] != n or (width is not None and batch[key].shape[-1] != width):
            raise ValueError(f"batch field {key!r} has shape {tuple(batch[key].shape)}")
    if noise is None:
        noise = torch.randn(n, model.latent, dtype=hist.dtype)
    out = model(hist, noise)
    est = _mse(out["vel"], batch["vel"]) + _mse(out["height"], batch["height"])
    recon = _mse(out["next_obs"], model.normalize(batch["next_obs"]))
    kl = torch.mean(kl_gaussian(out["mu"], out["logvar"]))
    fwd = recon + weights.kl * kl
    ph = _mse(out["phase"], batch["phase"])
    total = est + weights.fwd * fwd + weights.phase * ph
    return {"total": total, "est": est, "fwd": fwd, "recon": recon, "kl": kl, "phase": ph}


def total_loss(model: PhaseEstimator, batch: dict, weights: LossWeights, noise=None, term="total"):
    """Scalar loss and its gradient for every parameter (dict name -> array)."""
    model.zero_grad()
    losses = estimator_losses(model, batch, weights, noise)
    losses[term].backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in model.named_parameters()}
    return float(losses[term]), grads


def make_optimizer(params, lr=1e-3):
    """Adam with beta1 0.9, beta2 0.999, eps 1e-8."""
    return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)


def phase_rmse(pred, target) -> np.ndarray:
    """Per-leg root-mean-square phase error."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    return np.sqrt(np.mean((pred - target) ** 2, axis=tuple(range(pred.ndim - 1))))
