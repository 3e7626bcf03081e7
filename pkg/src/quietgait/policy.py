"""Gaussian actor on deployable inputs, value critic on privileged state."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from quietgait.sim import N_JOINTS, OBS_DIM, SCAN_OFFSETS, SimConfig

SCAN_DIM = len(SCAN_OFFSETS)
LOG_STD_MIN, LOG_STD_MAX = -4.0, 1.0


@dataclass
class Command:
    v_x: float = 0.0
    w: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("quiet factor beta must lie in [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.w, self.beta], dtype=float)


@dataclass
class PrivilegedState:
    """Simulation-only extras the critic sees on top of the actor input."""

    height_scan: np.ndarray  # (N, 11)
    body_velocity: np.ndarray  # (N, 2)
    contacts: np.ndarray  # (N, 4)
    phase: np.ndarray  # (N, 4)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.height_scan, self.body_velocity,
                               np.asarray(self.contacts, dtype=float), self.phase], axis=-1)


PRIV_DIM = SCAN_DIM + 2 + 4 + 4


def actor_input(obs, h_hat, v_hat, z, obs_offset, obs_scale) -> np.ndarray:
    """Deployment-path input ``[normalized o_t, h_hat, v_hat, z]``."""
    return np.concatenate([(np.asarray(obs) - obs_offset) * obs_scale, h_hat, v_hat, z], axis=-1)


def critic_input(actor_in, priv: PrivilegedState) -> np.ndarray:
    return np.concatenate([actor_in, priv.as_array()], axis=-1)


def _mlp(sizes, act=nn.ELU):
    mods = []
    for i in range(len(sizes) - 1):
        mods.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            mods.append(act())
    return nn.Sequential(*mods)


class Scale(nn.Module):
    """Fixed output gain; keeps network units O(1) while actions stay in radians."""

    def __init__(self, gain: float):
        super().__init__()
        self.gain = gain

    def forward(self, x):
        return self.gain * x


class ActOutput(NamedTuple):
    action: np.ndarray
    log_prob: np.ndarray
    raw: np.ndarray


class ActorCritic(nn.Module):
    def __init__(self, actor_dim: int, critic_dim: int, hidden: int = 128, layers: int = 3,
                 init_std: float = 0.25, action_clip: float = 1.0, final_gain: float = 0.01,
                 output_scale: float = 0.25):
        super().__init__()
        self.actor_dim = actor_dim
        self.critic_dim = critic_dim
        self.action_clip = action_clip
        self.actor = nn.Sequential(*_mlp([actor_dim] + [hidden] * (layers - 1) + [N_JOINTS]), Scale(output_scale))
        self.critic = _mlp([critic_dim] + [hidden] * (layers - 1) + [1])
        self.log_std = nn.Parameter(torch.full((N_JOINTS,), math.log(init_std)))
        last = self.actor[-2]
        with torch.no_grad():
            last.weight.mul_(final_gain)
            last.bias.zero_()

    def std(self):
        return torch.exp(torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def distribution(self, actor_in):
        mean = self.actor(actor_in)
        if not bool(torch.all(torch.isfinite(mean))):
            raise FloatingPointError("non-finite action mean")
        return torch.distributions.Normal(mean, self.std().expand_as(mean))

    def log_prob(self, actor_in, raw):
        return self.distribution(actor_in).log_prob(raw).sum(-1)

    def value(self, critic_in):
        return self.critic(critic_in).squeeze(-1)

    @torch.no_grad()
    def act(self, actor_in, mode: str = "sample", generator: torch.Generator | None = None) -> ActOutput:
        """Sample (or take the mean of) the action distribution.

        The executed action is clipped to ``+-action_clip``; the log-probability
        is of the unclipped draw.
        """
        x = torch.as_tensor(np.asarray(actor_in), dtype=self.log_std.dtype)
        if not torch.all(torch.isfinite(x)):
            raise FloatingPointError("non-finite actor input")
        dist = self.distribution(x)
        if mode == "mean":
            raw = dist.mean
        elif mode == "sample":
            raw = dist.mean + dist.stddev * torch.randn(dist.mean.shape, generator=generator, dtype=x.dtype)
        else:
            raise ValueError(f"unknown act mode {mode!r}")
        logp = dist.log_prob(raw).sum(-1)
        raw_np = raw.numpy().astype(np.float64)
        return ActOutput(np.clip(raw_np, -self.action_clip, self.action_clip), logp.numpy().astype(np.float64), raw_np)

    @torch.no_grad()
    def values(self, critic_in) -> np.ndarray:
        x = torch.as_tensor(np.asarray(critic_in), dtype=self.log_std.dtype)
        return self.value(x).numpy().astype(np.float64)


def action_to_targets(action, q_stand, cfg: SimConfig | None = None) -> np.ndarray:
    """Joint targets ``q_stand + a``, clamped to the joint limits when a config is given."""
    q = np.asarray(q_stand, dtype=float) + np.asarray(action, dtype=float)
    if cfg is not None:
        q = np.clip(q, cfg.joint_lower, cfg.joint_upper)
    return q


def default_dims(latent: int = 16) -> tuple[int, int]:
    actor_dim = OBS_DIM + SCAN_DIM + 2 + latent
    return actor_dim, actor_dim + PRIV_DIM
