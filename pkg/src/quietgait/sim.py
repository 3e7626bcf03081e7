"""Planar (sagittal-plane) quadruped with penalty ground contact.

Generalized coordinates per environment are ``[x, z, pitch, q_0 .. q_7]`` where
the joints are ordered ``(hip, knee)`` for legs FL, FR, HL, HR.  Pitch is
positive nose-down and joint angles are positive when they swing the distal
link backward, so a link at absolute angle ``a`` points along
``(-sin a, -cos a)``.

Every array in :class:`SimState` carries a leading batch axis.  The single-env
functions :func:`reset` and :func:`step` are thin wrappers around the batched
versions used by the trainer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from quietgait import _dynamics as _dyn
from quietgait import terrain as terrain_mod
from quietgait.terrain import Terrain

N_LEGS = 4
N_JOINTS = 8
N_GEN = 3 + N_JOINTS
LEG_NAMES = ("FL", "FR", "HL", "HR")
GRAVITY = 9.81

# contact points: 4 feet, 4 knees, trunk front/rear bottom corners
N_CONTACTS = 10
FOOT_IDX = slice(0, 4)
KNEE_IDX = slice(4, 8)

SCAN_OFFSETS = np.linspace(-0.5, 0.5, 11)


class ConfigurationError(ValueError):
    pass


class SimulationDivergedError(RuntimeError):
    pass


@dataclass
class SimConfig:
    physics_dt: float = 0.001
    control_dt: float = 0.02
    trunk_mass: float = 8.0
    trunk_inertia: float = 0.1
    thigh_mass: float = 0.9
    calf_mass: float = 0.15
    foot_effective_mass: float = 0.15
    armature: float = 0.01
    body_length: float = 0.376
    thigh_length: float = 0.213
    calf_length: float = 0.213
    trunk_half_length: float = 0.25
    trunk_half_height: float = 0.05
    contact_stiffness: float = 2.0e4
    contact_damping: float = 200.0
    contact_tangent_damping: float = 5.0e3
    ground_friction: float = 0.8
    q_stand: tuple = (0.8, -1.5, 0.8, -1.5, 0.8, -1.5, 0.8, -1.5)
    hip_limits: tuple = (-1.0, 2.6)
    knee_limits: tuple = (-2.7, -0.9)
    kp: float = 20.0
    kd: float = 0.5
    torque_limit: float = 23.7
    domain_randomization: bool = False
    push_randomization: bool = False
    push_interval: float = 8.0
    push_max_velocity: float = 0.3
    gravity: float = GRAVITY

    def __post_init__(self):
        self.q_stand = tuple(float(v) for v in self.q_stand)
        self.validate()

    def validate(self):
        if self.physics_dt <= 0:
            raise ConfigurationError("physics_dt must be positive")
        ratio = self.control_dt / self.physics_dt
        if self.control_dt <= 0 or abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigurationError("control_dt must be an integer multiple of physics_dt")
        if self.kp < 0 or self.kd < 0:
            raise ConfigurationError("kp and kd must be non-negative")
        if len(self.q_stand) != N_JOINTS:
            raise ConfigurationError("q_stand needs 8 joint angles")
        if self.torque_limit <= 0:
            raise ConfigurationError("torque_limit must be positive")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    @property
    def joint_lower(self) -> np.ndarray:
        return np.tile([self.hip_limits[0], self.knee_limits[0]], N_LEGS)

    @property
    def joint_upper(self) -> np.ndarray:
        return np.tile([self.hip_limits[1], self.knee_limits[1]], N_LEGS)

    def stand_height(self) -> float:
        """Trunk height above flat ground with every foot touching at ``q_stand``."""
        q = np.asarray(self.q_stand).reshape(N_LEGS, 2)
        a = q[:, 0]
        b = a + q[:, 1]
        drop = self.thigh_length * np.cos(a) + self.calf_length * np.cos(b)
        return float(np.max(drop))


@dataclass
class ContactEvent:
    leg: int
    kind: str  # "touchdown" | "liftoff"
    time: float
    impact_velocity: float
    material: str
    env: int = 0


@dataclass
class SimState:
    """Batched simulator state; index 0 of every array is the environment."""

    time: np.ndarray
    qpos: np.ndarray  # (N, 11)  x, z, pitch, joints
    qvel: np.ndarray  # (N, 11)
    qacc: np.ndarray  # (N, 8) joint accelerations, differenced across control steps
    torque: np.ndarray  # (N, 8) last applied torques
    foot_pos: np.ndarray  # (N, 4, 2)
    foot_vel: np.ndarray  # (N, 4, 2)
    contact: np.ndarray  # (N, 4) geometric: penetration >= 0
    stance: np.ndarray  # (N, 4) debounced contact state used for events
    n_collision: np.ndarray  # (N,) non-foot bodies touching the ground this step
    foot_drop_sq: np.ndarray  # (N, 4) mean over substeps of max(0, -v_z)^2
    foot_raise_sq: np.ndarray  # (N, 4) mean over substeps of max(0, v_z)^2
    trunk_mass: np.ndarray  # (N,)
    friction: np.ndarray  # (N,)
    next_push: np.ndarray  # (N,)
    zero_force_count: np.ndarray  # (N, 4)
    first_pen_velocity: np.ndarray  # (N, 4)
    slide: np.ndarray  # (N, 10) friction mode per contact point
    slide_sign: np.ndarray  # (N, 10)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    @property
    def num_envs(self) -> int:
        return self.qpos.shape[0]

    @property
    def trunk_pos(self) -> np.ndarray:
        return self.qpos[:, :2]

    @property
    def pitch(self) -> np.ndarray:
        return self.qpos[:, 2]

    @property
    def trunk_vel(self) -> np.ndarray:
        return self.qvel[:, :2]

    @property
    def pitch_rate(self) -> np.ndarray:
        return self.qvel[:, 2]

    @property
    def q(self) -> np.ndarray:
        return self.qpos[:, 3:]

    @property
    def qd(self) -> np.ndarray:
        return self.qvel[:, 3:]

    def copy(self) -> SimState:
        kw = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v.copy() if isinstance(v, np.ndarray) else v
        return SimState(**kw)

    def select(self, idx) -> SimState:
        kw = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            kw[f.name] = v[idx].copy() if isinstance(v, np.ndarray) else v
        return SimState(**kw)


# ---------------------------------------------------------------------------
# kinematics


class _Model:
    """Per-batch constants derived from a SimConfig."""

    def __init__(self, cfg: SimConfig, trunk_mass: np.ndarray):
        n = len(trunk_mass)
        self.cfg = cfg
        self.n = n
        half = cfg.body_length / 2
        self.hip_bx = np.array([half, half, -half, -half])
        self.l1 = cfg.thigh_length
        self.l2 = cfg.calf_length
        self.m_thigh = cfg.thigh_mass
        self.m_calf = cfg.calf_mass
        self.m_foot = cfg.foot_effective_mass
        self.trunk_mass = trunk_mass
        self.corner_b = np.array([[cfg.trunk_half_length, -cfg.trunk_half_height],
                                  [-cfg.trunk_half_length, -cfg.trunk_half_height]])
        # constant rotational part of the mass matrix plus rotor armature
        i_thigh = cfg.thigh_mass * self.l1 ** 2 / 12.0
        i_calf = cfg.calf_mass * self.l2 ** 2 / 12.0
        m_rot = np.zeros((N_GEN, N_GEN))
        for leg in range(N_LEGS):
            h, k = 3 + 2 * leg, 4 + 2 * leg
            jw = np.zeros(N_GEN)
            jw[2] = 1.0
            jw[h] = 1.0
            m_rot += i_thigh * np.outer(jw, jw)
            jw[k] = 1.0
            m_rot += i_calf * np.outer(jw, jw)
            m_rot[h, h] += cfg.armature
            m_rot[k, k] += cfg.armature
        trunk_inertia = cfg.trunk_inertia * trunk_mass / cfg.trunk_mass
        self.m_const = np.broadcast_to(m_rot, (n, N_GEN, N_GEN)).copy()
        self.m_const[:, 2, 2] += trunk_inertia
        self.m_const[:, 0, 0] += trunk_mass
        self.m_const[:, 1, 1] += trunk_mass
        # point masses per leg: thigh COM, calf COM, foot
        self.frac = np.array([[0.5, 0.0], [1.0, 0.5], [1.0, 1.0]])
        self.pm = np.array([cfg.thigh_mass, cfg.calf_mass, cfg.foot_effective_mass])
        self.leg_cols = np.array([[3 + 2 * i, 4 + 2 * i] for i in range(N_LEGS)])
        self.lower = cfg.joint_lower
        self.upper = cfg.joint_upper


def _leg_terms(model: _Model, qpos, qvel, frac):
    """Positions, Jacobian columns and velocity-product accelerations of leg points.

    ``frac`` is (P, 2): the point sits at ``frac[0]`` along the thigh and then
    ``frac[1]`` along the calf.  Returns arrays shaped (N, 4, P, 2).
    """
    th = qpos[:, 2:3]
    thd = qvel[:, 2:3]
    qh = qpos[:, 3::2]
    qk = qpos[:, 4::2]
    a = th + qh
    b = a + qk
    ad = thd + qvel[:, 3::2]
    bd = ad + qvel[:, 4::2]
    sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
    st, ct = np.sin(th), np.cos(th)
    bx = model.hip_bx[None, :]
    hip = np.stack([qpos[:, 0:1] + bx * ct, qpos[:, 1:2] - bx * st], -1)  # (N,4,2)
    drot = np.stack([-bx * st + 0 * ct, -bx * ct], -1)
    rotb = hip - qpos[:, None, :2]
    ua = np.stack([-sa, -ca], -1)
    ub = np.stack([-sb, -cb], -1)
    dua = np.stack([-ca, sa], -1)
    dub = np.stack([-cb, sb], -1)
    f1 = frac[:, 0][None, None, :, None] * model.l1
    f2 = frac[:, 1][None, None, :, None] * model.l2
    pos = hip[:, :, None] + f1 * ua[:, :, None] + f2 * ub[:, :, None]
    jk = f2 * dub[:, :, None]
    jh = f1 * dua[:, :, None] + jk
    jth = drot[:, :, None] + jh
    bias = -(thd[:, :, None, None] ** 2) * rotb[:, :, None] \
        - f1 * (ad[:, :, None, None] ** 2) * ua[:, :, None] \
        - f2 * (bd[:, :, None, None] ** 2) * ub[:, :, None]
    return pos, jth, jh, jk, bias


def forward_kinematics(cfg: SimConfig, qpos: np.ndarray, qvel: np.ndarray | None = None):
    """Foot positions (N,4,2) and velocities for generalized coordinates."""
    qpos = np.atleast_2d(qpos)
    qvel = np.zeros_like(qpos) if qvel is None else np.atleast_2d(qvel)
    model = _Model(cfg, np.full(len(qpos), cfg.trunk_mass))
    pos, jth, jh, jk, _ = _leg_terms(model, qpos, qvel, np.array([[1.0, 1.0]]))
    pos, jth, jh, jk = pos[:, :, 0], jth[:, :, 0], jh[:, :, 0], jk[:, :, 0]
    vel = qvel[:, None, :2] + jth * qvel[:, None, 2:3] + jh * qvel[:, 3::2, None] + jk * qvel[:, 4::2, None]
    return pos, vel


def _dense_jacobian(model: _Model, jth, jh, jk):
    """Dense (N, 4*P, 2, 11) Jacobians from per-leg columns."""
    n, _, p, _ = jth.shape
    J = np.zeros((n, N_LEGS, p, 2, N_GEN))
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    J[..., 2] = jth
    for leg in range(N_LEGS):
        J[:, leg, :, :, 3 + 2 * leg] = jh[:, leg]
        J[:, leg, :, :, 4 + 2 * leg] = jk[:, leg]
    return J.reshape(n, N_LEGS * p, 2, N_GEN)


def _contact_frames(model: _Model, qpos, qvel):
    """Contact-point positions (N,10,2), Jacobians (N,10,2,11), velocities (N,10,2)."""
    n = qpos.shape[0]
    pos, jth, jh, jk, _ = _leg_terms(model, qpos, qvel, np.array([[1.0, 1.0], [1.0, 0.0]]))
    Jl = _dense_jacobian(model, jth, jh, jk).reshape(n, N_LEGS, 2, 2, N_GEN)
    th = qpos[:, 2]
    st, ct = np.sin(th), np.cos(th)
    cb = model.corner_b
    # rot(th) (bx, bz) = (bx c + bz s, -bx s + bz c)
    cpos = np.stack([qpos[:, None, 0] + cb[None, :, 0] * ct[:, None] + cb[None, :, 1] * st[:, None],
                     qpos[:, None, 1] - cb[None, :, 0] * st[:, None] + cb[None, :, 1] * ct[:, None]], -1)
    cJ = np.zeros((n, 2, 2, N_GEN))
    cJ[:, :, 0, 0] = 1.0
    cJ[:, :, 1, 1] = 1.0
    cJ[:, :, 0, 2] = -cb[None, :, 0] * st[:, None] + cb[None, :, 1] * ct[:, None]
    cJ[:, :, 1, 2] = -cb[None, :, 0] * ct[:, None] - cb[None, :, 1] * st[:, None]
    P = np.concatenate([pos[:, :, 0], pos[:, :, 1], cpos], axis=1)
    J = np.concatenate([Jl[:, :, 0], Jl[:, :, 1], cJ], axis=1)
    V = np.einsum("ncai,ni->nca", J, qvel)
    return P, J, V


def pd_torque(q_des, q, qd, cfg: SimConfig) -> np.ndarray:
    """PD joint torque ``kp (q_des - q) - kd qd`` clamped to ``+-torque_limit``."""
    tau = cfg.kp * (np.asarray(q_des) - np.asarray(q)) - cfg.kd * np.asarray(qd)
    return np.clip(tau, -cfg.torque_limit, cfg.torque_limit)


# ---------------------------------------------------------------------------
# reset / step


def reset_batch(cfg: SimConfig, terrains: list[Terrain], seeds) -> SimState:
    seeds = list(seeds)
    n = len(seeds)
    if len(terrains) != n:
        raise ValueError("one terrain per environment required")
    h0 = cfg.stand_height()
    if h0 <= cfg.trunk_half_height + 1e-3:
        raise ConfigurationError(f"q_stand gives stand height {h0:.3f} m: trunk would be below ground")
    trunk_mass = np.full(n, cfg.trunk_mass)
    friction = np.full(n, cfg.ground_friction)
    next_push = np.full(n, np.inf)
    for i, s in enumerate(seeds):
        r = np.random.default_rng(s)
        if cfg.domain_randomization:
            trunk_mass[i] *= r.uniform(0.9, 1.1)
            friction[i] *= r.uniform(0.8, 1.2)
        if cfg.push_randomization:
            next_push[i] = cfg.push_interval * r.uniform(0.5, 1.5)
    qpos = np.zeros((n, N_GEN))
    qpos[:, 3:] = cfg.q_stand
    feet0, _ = forward_kinematics(cfg, qpos)
    for i, t in enumerate(terrains):
        ground = t.height(feet0[i, :, 0])
        qpos[i, 1] = np.max(ground - feet0[i, :, 1])
    feet, _ = forward_kinematics(cfg, qpos)
    state = SimState(
        time=np.zeros(n),
        qpos=qpos,
        qvel=np.zeros((n, N_GEN)),
        qacc=np.zeros((n, N_JOINTS)),
        torque=np.zeros((n, N_JOINTS)),
        foot_pos=feet,
        foot_vel=np.zeros((n, N_LEGS, 2)),
        contact=np.ones((n, N_LEGS), bool),
        stance=np.ones((n, N_LEGS), bool),
        n_collision=np.zeros(n, np.int64),
        foot_drop_sq=np.zeros((n, N_LEGS)),
        foot_raise_sq=np.zeros((n, N_LEGS)),
        trunk_mass=trunk_mass,
        friction=friction,
        next_push=next_push,
        zero_force_count=np.zeros((n, N_LEGS), np.int64),
        first_pen_velocity=np.full((n, N_LEGS), -1.0),
        slide=np.zeros((n, N_CONTACTS), bool),
        slide_sign=np.zeros((n, N_CONTACTS)),
        rng=np.random.default_rng([int(s) for s in seeds] + [n]),
    )
    for i, t in enumerate(terrains):
        ground = t.height(feet[i, :, 0])
        state.contact[i] = feet[i, :, 1] <= ground + 1e-12
        state.stance[i] = state.contact[i]
    return state


def reset(config: SimConfig, terrain: Terrain, rng_seed: int) -> SimState:
    """Standing start at ``q_stand`` with the lowest foot on the ground at x=0."""
    return reset_batch(config, [terrain], [rng_seed])


class BatchStepper:
    """Advances a batch of environments sharing one SimConfig.

    Terrain grids are stacked once at construction; call :meth:`set_terrain`
    when an environment is reset onto a new profile.
    """

    def __init__(self, cfg: SimConfig, terrains: list[Terrain]):
        self.cfg = cfg
        self.terrains = list(terrains)
        self.grid, self.x0, self.dx = terrain_mod.stack(self.terrains)
        self._model = None
        self._model_mass = None
        self._prm = np.zeros(_dyn.N_PARAMS)
        self._prm[_dyn.P_DT] = cfg.physics_dt
        self._prm[_dyn.P_NSUB] = cfg.substeps
        self._prm[_dyn.P_L1] = cfg.thigh_length
        self._prm[_dyn.P_L2] = cfg.calf_length
        self._prm[_dyn.P_HALF] = cfg.body_length / 2
        self._prm[_dyn.P_CHL] = cfg.trunk_half_length
        self._prm[_dyn.P_CHH] = cfg.trunk_half_height
        self._prm[_dyn.P_K] = cfg.contact_stiffness
        self._prm[_dyn.P_C] = cfg.contact_damping
        self._prm[_dyn.P_CT] = cfg.contact_tangent_damping
        self._prm[_dyn.P_KP] = cfg.kp
        self._prm[_dyn.P_KD] = cfg.kd
        self._prm[_dyn.P_TLIM] = cfg.torque_limit
        self._prm[_dyn.P_G] = cfg.gravity

    def set_terrain(self, i: int, t: Terrain):
        if t.x0 != self.x0 or t.dx != self.dx or len(t.heights) != self.grid.shape[1]:
            raise ValueError("replacement terrain must share the batch grid")
        self.terrains[i] = t
        self.grid[i] = t.heights

    def model(self, state: SimState) -> _Model:
        if self._model is None or not np.array_equal(self._model_mass, state.trunk_mass):
            self._model = _Model(self.cfg, state.trunk_mass)
            self._model_mass = state.trunk_mass.copy()
        return self._model

    def step(self, state: SimState, q_des: np.ndarray):
        """Advance one control step; returns (new_state, events, diverged_mask)."""
        cfg = self.cfg
        s = state.copy()
        n = s.num_envs
        model = self.model(s)
        q_des = np.clip(np.asarray(q_des, dtype=np.float64).reshape(n, N_JOINTS), model.lower, model.upper)
        qd_before = s.qvel[:, 3:].copy()

        if cfg.push_randomization:
            due = s.time >= s.next_push
            if np.any(due):
                kick = s.rng.uniform(-cfg.push_max_velocity, cfg.push_max_velocity, size=n)
                s.qvel[due, 0] += kick[due]
                s.next_push[due] += cfg.push_interval

        cap = 8 * cfg.substeps * n
        ev_env = np.zeros(cap, np.int64)
        ev_leg = np.zeros(cap, np.int64)
        ev_kind = np.zeros(cap, np.int64)
        ev_time = np.zeros(cap)
        ev_vel = np.zeros(cap)
        collided = np.zeros((n, 5), bool)
        n_ev = _dyn.control_step(
            s.qpos, s.qvel, q_des, self.grid, self.x0, self.dx, self._prm, s.trunk_mass, s.friction,
            model.m_const, model.pm, model.hip_bx, model.lower, model.upper, s.time, s.slide,
            s.slide_sign, s.stance, s.zero_force_count, s.first_pen_velocity, s.torque,
            s.foot_drop_sq, s.foot_raise_sq, collided, ev_env, ev_leg, ev_kind, ev_time, ev_vel)

        order = np.lexsort((ev_leg[:n_ev], ev_env[:n_ev], ev_time[:n_ev]))
        events = []
        if n_ev:
            feet, _ = forward_kinematics(cfg, s.qpos)
            for i in order:
                e, leg = int(ev_env[i]), int(ev_leg[i])
                mat = self.terrains[e].material_at(float(feet[e, leg, 0]))
                kind = "touchdown" if ev_kind[i] == 1 else "liftoff"
                events.append(ContactEvent(leg, kind, float(ev_time[i]), float(ev_vel[i]), mat, e))

        diverged = ~(np.all(np.isfinite(s.qpos), axis=1) & np.all(np.isfinite(s.qvel), axis=1))
        diverged |= np.any(np.abs(s.qvel) > 1e3, axis=1)
        s.qacc = (s.qvel[:, 3:] - qd_before) / cfg.control_dt
        s.foot_pos, s.foot_vel = forward_kinematics(cfg, s.qpos, s.qvel)
        ground, _ = terrain_mod.height_and_slope(self.grid, self.x0, self.dx, s.foot_pos[:, :, 0])
        s.contact = s.foot_pos[:, :, 1] <= ground
        s.n_collision = collided.sum(axis=1)
        return s, events, diverged


def step(state: SimState, q_des, config: SimConfig, terrain: Terrain):
    """Single-environment control step; raises on divergence."""
    stepper = BatchStepper(config, [terrain])
    new, events, diverged = stepper.step(state, np.asarray(q_des).reshape(1, N_JOINTS))
    if diverged[0]:
        raise SimulationDivergedError("non-finite simulator state")
    return new, events


def trunk_height(state: SimState, terrains) -> np.ndarray:
    """Trunk height above the ground directly beneath it, per environment."""
    return np.array([state.qpos[i, 1] - t.height(state.qpos[i, 0]) for i, t in enumerate(terrains)])


def sample_height_scan(state: SimState, terrain: Terrain | list[Terrain]) -> np.ndarray:
    """Ground heights relative to the trunk at fixed longitudinal offsets (N, 11)."""
    terrains = terrain if isinstance(terrain, list) else [terrain] * state.num_envs
    x = state.qpos[:, 0:1] + SCAN_OFFSETS[None, :]
    out = np.empty_like(x)
    for i, t in enumerate(terrains):
        out[i] = t.height(x[i]) - state.qpos[i, 1]
    return out


def mechanical_energy(cfg: SimConfig, state: SimState) -> np.ndarray:
    """Kinetic plus gravitational potential energy, per environment."""
    model = _Model(cfg, state.trunk_mass)
    pos, jth, jh, jk, _ = _leg_terms(model, state.qpos, state.qvel, model.frac)
    J = _dense_jacobian(model, jth, jh, jk)
    n = state.num_envs
    m = np.broadcast_to(np.tile(model.pm, N_LEGS), (n, 3 * N_LEGS))
    M = model.m_const + np.einsum("npai,np,npaj->nij", J, m, J)
    ke = 0.5 * np.einsum("ni,nij,nj->n", state.qvel, M, state.qvel)
    pz = pos.reshape(n, -1, 2)[..., 1]
    pe = cfg.gravity * (model.trunk_mass * state.qpos[:, 1] + np.einsum("np,np->n", m, pz))
    return ke + pe


# ---------------------------------------------------------------------------
# observations

OBS_DIM = 30
OBS_SLICES = {
    "pitch_rate": slice(0, 1),
    "gravity": slice(1, 3),
    "q": slice(3, 11),
    "qd": slice(11, 19),
    "prev_action": slice(19, 27),
    "command": slice(27, 30),
}


def observe(state: SimState, command, prev_action) -> np.ndarray:
    """Proprioceptive observation ``[w, g, q, qd, a_prev, c]`` per environment (N, 30).

    ``g`` is gravity in the body frame, ``(sin pitch, -cos pitch)``; the command
    is ``[v_x_cmd, pitch_rate_cmd, beta]``.
    """
    n = state.num_envs
    c = command.as_array() if hasattr(command, "as_array") else np.asarray(command, dtype=float)
    c = np.broadcast_to(c, (n, 3))
    prev_action = np.broadcast_to(np.asarray(prev_action, dtype=float), (n, N_JOINTS))
    th = state.qpos[:, 2]
    return np.concatenate([
        state.qvel[:, 2:3],
        np.stack([np.sin(th), -np.cos(th)], -1),
        state.qpos[:, 3:],
        state.qvel[:, 3:],
        prev_action,
        c,
    ], axis=1)


def observation_normalizer(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (offset, scale) so that ``(obs - offset) * scale`` is O(1) for the networks."""
    offset = np.zeros(OBS_DIM)
    scale = np.ones(OBS_DIM)
    offset[OBS_SLICES["q"]] = cfg.q_stand
    scale[OBS_SLICES["pitch_rate"]] = 0.25
    scale[OBS_SLICES["qd"]] = 0.05
    scale[OBS_SLICES["command"]] = (2.0, 0.25, 1.0)
    return offset, scale
