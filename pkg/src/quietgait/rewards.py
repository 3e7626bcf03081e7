"""Per-step reward terms and the quiet-factor blend.

Planar mapping of the 3-D terms: the linear tracking term uses forward speed,
the angular tracking term and the body angular-velocity penalty both use the
pitch rate (commanded pitch rate is 0), and the gravity-orientation penalty is
``sin(pitch)^2``.  Phase terms use vertical foot velocity only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np


@dataclass
class RewardWeights:
    lin_track: float = 1.0
    ang_track: float = 0.5
    drop_foot: float = -0.05
    raise_foot: float = 0.01
    lin_vel_z: float = -2.0
    ang_vel_xy: float = -0.05
    joint_power: float = -2.0e-5
    joint_accel: float = -2.5e-7
    action_rate: float = -0.01
    collision: float = -0.1
    body_height: float = -1.0
    orientation: float = -0.2
    k: float = 0.2
    h_des: float = 0.30
    tracking_sigma: float = 0.25  # exp(-(err^2) / sigma) == exp(-4 err^2)

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ValueError("k must lie in [0, 1]")


@dataclass
class StepQuantities:
    """Simulator quantities a reward needs, batched over environments."""

    v_x: np.ndarray
    v_z: np.ndarray
    pitch: np.ndarray
    pitch_rate: np.ndarray
    torque: np.ndarray
    qd: np.ndarray
    qacc: np.ndarray
    action: np.ndarray
    prev_action: np.ndarray
    n_collision: np.ndarray
    height: np.ndarray
    drop_sq: np.ndarray
    raise_sq: np.ndarray

    @classmethod
    def from_state(cls, state, height, action, prev_action):
        return cls(
            v_x=state.qvel[:, 0], v_z=state.qvel[:, 1], pitch=state.qpos[:, 2], pitch_rate=state.qvel[:, 2],
            torque=state.torque, qd=state.qvel[:, 3:], qacc=state.qacc, action=np.asarray(action),
            prev_action=np.asarray(prev_action), n_collision=state.n_collision, height=np.asarray(height),
            drop_sq=state.foot_drop_sq, raise_sq=state.foot_raise_sq)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RewardBreakdown:
    r_phase: np.ndarray
    r_task: np.ndarray
    r_other: np.ndarray
    total: np.ndarray
    terms: dict = field(default_factory=dict)


def task_reward(v_x, pitch_rate, v_cmd, w_cmd=0.0, weights: RewardWeights | None = None):
    w = weights or RewardWeights()
    lin = np.exp(-np.square(np.asarray(v_cmd) - v_x) / w.tracking_sigma)
    ang = np.exp(-np.square(np.asarray(w_cmd) - pitch_rate) / w.tracking_sigma)
    return w.lin_track * lin + w.ang_track * ang


def phase_reward_from_squares(phi, drop_sq, raise_sq, weights: RewardWeights | None = None):
    """``w_d sum e^phi v_drop^2 + w_r sum e^-phi v_raise^2`` over legs (last axis)."""
    w = weights or RewardWeights()
    phi = np.asarray(phi, dtype=float)
    return (w.drop_foot * np.sum(np.exp(phi) * drop_sq, axis=-1)
            + w.raise_foot * np.sum(np.exp(-phi) * raise_sq, axis=-1))


def phase_reward(phi, foot_vz, weights: RewardWeights | None = None):
    """Phase reward from instantaneous vertical foot velocities."""
    foot_vz = np.asarray(foot_vz, dtype=float)
    return phase_reward_from_squares(phi, np.maximum(0.0, -foot_vz) ** 2, np.maximum(0.0, foot_vz) ** 2, weights)


def other_reward_terms(q: StepQuantities, weights: RewardWeights | None = None) -> dict:
    w = weights or RewardWeights()
    return {
        "lin_vel_z": w.lin_vel_z * np.square(q.v_z),
        "ang_vel_xy": w.ang_vel_xy * np.square(q.pitch_rate),
        "joint_power": w.joint_power * np.sum(np.abs(q.torque) * np.abs(q.qd), axis=-1),
        "joint_accel": w.joint_accel * np.sum(np.square(q.qacc), axis=-1),
        "action_rate": w.action_rate * np.sum(np.square(q.action - q.prev_action), axis=-1),
        "collision": w.collision * np.asarray(q.n_collision, dtype=float),
        "body_height": w.body_height * np.square(w.h_des - q.height),
        "orientation": w.orientation * np.square(np.sin(q.pitch)),
    }


def other_rewards(q: StepQuantities, weights: RewardWeights | None = None):
    return sum(other_reward_terms(q, weights).values())


def blend(r_phase, r_task, r_other, beta, k=0.2) -> RewardBreakdown:
    """Total reward ``beta r_phase + (1 - k beta) r_task + r_other``."""
    beta_arr = np.asarray(beta, dtype=float)
    if np.any(beta_arr < 0) or np.any(beta_arr > 1) or not np.all(np.isfinite(beta_arr)):
        raise ValueError("beta must lie in [0, 1]")
    total = beta_arr * r_phase + (1.0 - k * beta_arr) * r_task + r_other
    return RewardBreakdown(np.asarray(r_phase), np.asarray(r_task), np.asarray(r_other), total)


def compute(q: StepQuantities, phi, v_cmd, w_cmd, beta, weights: RewardWeights | None = None) -> RewardBreakdown:
    """All terms for one batched step, with a per-term map for logging."""
    w = weights or RewardWeights()
    r_task = task_reward(q.v_x, q.pitch_rate, v_cmd, w_cmd, w)
    r_phase = phase_reward_from_squares(phi, q.drop_sq, q.raise_sq, w)
    terms = other_reward_terms(q, w)
    r_other = sum(terms.values())
    out = blend(r_phase, r_task, r_other, beta, w.k)
    out.terms = dict(terms, task=r_task, phase=r_phase)
    return out
