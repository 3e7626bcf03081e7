"""Pure-numpy re-implementation of the compiled control step, used as an oracle."""

from __future__ import annotations

import numpy as np

from quietgait import terrain as terrain_mod
from quietgait.sim import (FOOT_IDX, N_JOINTS, N_LEGS, BatchStepper, ContactEvent, _contact_frames,
                           _dense_jacobian, _leg_terms, forward_kinematics, pd_torque)


class ReferenceStepper(BatchStepper):
    def step(self, state: SimState, q_des: np.ndarray):
        """Advance one control step; returns (new_state, events, diverged_mask)."""
        cfg = self.cfg
        s = state.copy()
        n = s.num_envs
        model = self.model(s)
        q_des = np.clip(np.asarray(q_des, dtype=np.float64).reshape(n, N_JOINTS), model.lower, model.upper)
        dt = cfg.physics_dt
        nsub = cfg.substeps
        qd_before = s.qvel[:, 3:].copy()
        events: list[ContactEvent] = []
        collided = np.zeros((n, 5), bool)
        drop_acc = np.zeros((n, N_LEGS))
        raise_acc = np.zeros((n, N_LEGS))

        if cfg.push_randomization:
            due = s.time >= s.next_push
            if np.any(due):
                kick = s.rng.uniform(-cfg.push_max_velocity, cfg.push_max_velocity, size=n)
                s.qvel[due, 0] += kick[due]
                s.next_push[due] += cfg.push_interval

        for _ in range(nsub):
            tau = pd_torque(q_des, s.qpos[:, 3:], s.qvel[:, 3:], cfg)
            fn_foot, pen_foot, vn_foot, vz_foot, pen_other = self._substep(s, tau, model)
            s.time = s.time + dt
            self._update_events(s, fn_foot, pen_foot, vn_foot, events)
            collided[:, :4] |= pen_other[:, :4] > 0
            collided[:, 4] |= np.any(pen_other[:, 4:] > 0, axis=1)
            drop_acc += np.maximum(0.0, -vz_foot) ** 2
            raise_acc += np.maximum(0.0, vz_foot) ** 2

        diverged = ~(np.all(np.isfinite(s.qpos), axis=1) & np.all(np.isfinite(s.qvel), axis=1))
        diverged |= np.any(np.abs(s.qvel) > 1e3, axis=1)
        s.torque = tau
        s.qacc = (s.qvel[:, 3:] - qd_before) / cfg.control_dt
        s.foot_pos, s.foot_vel = forward_kinematics(cfg, s.qpos, s.qvel)
        ground, _ = terrain_mod.height_and_slope(self.grid, self.x0, self.dx, s.foot_pos[:, :, 0])
        s.contact = s.foot_pos[:, :, 1] <= ground
        s.n_collision = collided.sum(axis=1)
        s.foot_drop_sq = drop_acc / nsub
        s.foot_raise_sq = raise_acc / nsub
        return s, events, diverged

    def _substep(self, s: SimState, tau: np.ndarray, model: _Model):
        cfg = self.cfg
        dt = cfg.physics_dt
        n = s.num_envs
        qpos, qvel = s.qpos, s.qvel
        pos, jth, jh, jk, bias = _leg_terms(model, qpos, qvel, model.frac)
        J = _dense_jacobian(model, jth, jh, jk)  # (N, 12, 2, 11)
        m = np.broadcast_to(np.tile(model.pm, N_LEGS), (n, 3 * N_LEGS))
        M = model.m_const + np.einsum("npai,np,npaj->nij", J, m, J)
        acc = bias.reshape(n, -1, 2).copy()
        acc[..., 1] += cfg.gravity
        Q = -np.einsum("npai,np,npa->ni", J, m, acc)
        Q[:, 1] -= model.trunk_mass * cfg.gravity
        Q[:, 3:] += tau

        P, Jc, V = _contact_frames(model, qpos, qvel)
        h, slope = terrain_mod.height_and_slope(self.grid, self.x0, self.dx, P[..., 0])
        inv = 1.0 / np.sqrt(1.0 + slope ** 2)
        nrm = np.stack([-slope * inv, inv], -1)
        tan = np.stack([inv, slope * inv], -1)
        pen = (h - P[..., 1]) * inv
        Jn = np.einsum("nca,ncai->nci", nrm, Jc)
        Jt = np.einsum("nca,ncai->nci", tan, Jc)
        vn = np.einsum("nca,nca->nc", nrm, V)

        k = cfg.contact_stiffness
        Dn = k * dt + cfg.contact_damping
        ct = cfg.contact_tangent_damping
        mu = s.friction[:, None]
        active = pen > 0
        slide = s.slide & active
        sgn = s.slide_sign
        Mq = np.einsum("nij,nj->ni", M, qvel) + dt * Q
        JnTJn = np.einsum("nci,ncj->ncij", Jn, Jn)
        JtTJt = np.einsum("nci,ncj->ncij", Jt, Jt)
        JtTJn = np.einsum("nci,ncj->ncij", Jt, Jn)
        for _ in range(5):
            a = active.astype(float)
            st = (active & ~slide).astype(float)
            sl = (active & slide).astype(float)
            A = M + dt * (np.einsum("nc,ncij->nij", a * Dn, JnTJn)
                          + np.einsum("nc,ncij->nij", st * ct, JtTJt)
                          - np.einsum("nc,ncij->nij", sl * mu * sgn * Dn, JtTJn))
            b = Mq + dt * (np.einsum("nc,nci->ni", a * k * pen, Jn)
                           - np.einsum("nc,nci->ni", sl * mu * sgn * k * pen, Jt))
            qv_new = np.linalg.solve(A, b[..., None])[..., 0]
            vn_new = np.einsum("nci,ni->nc", Jn, qv_new)
            vt_new = np.einsum("nci,ni->nc", Jt, qv_new)
            fn = a * (k * pen - Dn * vn_new)
            ft = np.where(slide, -mu * sgn * fn, -ct * vt_new) * a
            release = active & (fn < 0)
            to_slide = active & ~slide & (np.abs(ft) > mu * fn)
            to_stick = active & slide & (vt_new * sgn <= 0)
            if not (np.any(release) or np.any(to_slide) or np.any(to_stick)):
                break
            active = active & ~release
            new_sgn = np.where(to_slide, -np.sign(ft), sgn)
            sgn = np.where(new_sgn == 0, 1.0, new_sgn)
            slide = (slide | to_slide) & ~to_stick
        fn = np.where(active, fn, 0.0)
        s.slide = slide & active
        s.slide_sign = sgn
        qpos_new = qpos + dt * qv_new
        j = qpos_new[:, 3:]
        lo = j < model.lower
        hi = j > model.upper
        if np.any(lo) or np.any(hi):
            qpos_new[:, 3:] = np.clip(j, model.lower, model.upper)
            jv = qv_new[:, 3:]
            jv[(lo & (jv < 0)) | (hi & (jv > 0))] = 0.0
        s.qpos = qpos_new
        s.qvel = qv_new
        return fn[:, FOOT_IDX], pen[:, FOOT_IDX], vn[:, FOOT_IDX], V[:, FOOT_IDX, 1], pen[:, 4:]

    def _update_events(self, s: SimState, fn, pen, vn, events):
        first = (~s.stance) & (pen > 0) & (s.first_pen_velocity < 0)
        s.first_pen_velocity = np.where(first, np.maximum(0.0, -vn), s.first_pen_velocity)
        touchdown = (~s.stance) & (pen > 0) & (fn > 1.0)
        zero = fn <= 0.0
        s.zero_force_count = np.where(s.stance & zero, s.zero_force_count + 1, 0)
        liftoff = s.stance & (s.zero_force_count >= 2)
        if np.any(touchdown) or np.any(liftoff):
            for env, leg in zip(*np.nonzero(touchdown | liftoff)):
                t = float(s.time[env])
                foot, _ = forward_kinematics(self.cfg, s.qpos[env:env + 1])
                mat = self.terrains[env].material_at(float(foot[0, leg, 0]))
                if touchdown[env, leg]:
                    v = float(s.first_pen_velocity[env, leg])
                    events.append(ContactEvent(int(leg), "touchdown", t, max(v, 0.0), mat, int(env)))
                else:
                    events.append(ContactEvent(int(leg), "liftoff", t, 0.0, mat, int(env)))
            s.stance = (s.stance | touchdown) & ~liftoff
            s.zero_force_count = np.where(liftoff | touchdown, 0, s.zero_force_count)
        # re-arm first-penetration capture once the foot is clear of the ground
        rearm = (~s.stance) & (pen <= 0)
        s.first_pen_velocity = np.where(rearm, -1.0, s.first_pen_velocity)


