"""Compiled control-step kernel for the planar quadruped.

Mirrors the batched numpy formulation in ``sim`` (tests compare the two) but
loops over environments and sub-steps inside numba.  Contact forces use a
linearly implicit penalty model: normal spring-damper and sticking tangential
damper are solved together with the joint-space dynamics, and an active set
handles separation and Coulomb sliding.
"""

import numpy as np
from numba import njit

NG = 11
NC = 10
MAX_ITERS = 5

# parameter vector layout
P_DT, P_NSUB, P_L1, P_L2, P_HALF, P_CHL, P_CHH, P_K, P_C, P_CT, P_KP, P_KD, P_TLIM, P_G = range(14)
N_PARAMS = 14


@njit(cache=True)
def _solve(A, b, x):
    """Gaussian elimination with partial pivoting; A and b are overwritten."""
    n = b.shape[0]
    for col in range(n):
        piv = col
        best = abs(A[col, col])
        for r in range(col + 1, n):
            v = abs(A[r, col])
            if v > best:
                best = v
                piv = r
        if piv != col:
            for c in range(n):
                tmp = A[col, c]
                A[col, c] = A[piv, c]
                A[piv, c] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        d = A[col, col]
        for r in range(col + 1, n):
            f = A[r, col] / d
            if f != 0.0:
                for c in range(col, n):
                    A[r, c] -= f * A[col, c]
                b[r] -= f * b[col]
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, n):
            acc -= A[r, c] * x[c]
        x[r] = acc / A[r, r]


@njit(cache=True)
def _terrain(grid, x0, dx, x):
    g = grid.shape[0]
    u = (x - x0) / dx
    inside = u >= 0.0 and u <= g - 1
    if u < 0.0:
        u = 0.0
    if u > g - 1.000001:
        u = g - 1.000001
    i0 = int(u)
    frac = u - i0
    h0 = grid[i0]
    h1 = grid[i0 + 1]
    h = h0 + frac * (h1 - h0)
    slope = (h1 - h0) / dx if inside else 0.0
    return h, slope


@njit(cache=True)
def _substep(qpos, qvel, tau, grid, x0, dx, prm, trunk_mass, mu, m_const, pm, hip_bx,
             slide, sgn, fn_out, pen_out, vn_out, vz_out):
    dt = prm[P_DT]
    l1 = prm[P_L1]
    l2 = prm[P_L2]
    g = prm[P_G]
    k = prm[P_K]
    Dn = k * dt + prm[P_C]
    ct = prm[P_CT]

    M = m_const.copy()
    Q = np.zeros(NG)
    Q[1] = -trunk_mass * g
    for j in range(8):
        Q[3 + j] = tau[j]

    th = qpos[2]
    thd = qvel[2]
    s_t = np.sin(th)
    c_t = np.cos(th)

    # contact point data: position, 5 jacobian columns (x, z, th, h, k)
    cpx = np.zeros(NC)
    cpz = np.zeros(NC)
    cJ = np.zeros((NC, 5, 2))
    ccol = np.zeros((NC, 5), np.int64)
    cols = np.zeros(5, np.int64)
    jc = np.zeros((5, 2))

    for leg in range(4):
        bx = hip_bx[leg]
        hcol = 3 + 2 * leg
        kcol = 4 + 2 * leg
        a = th + qpos[hcol]
        b = a + qpos[kcol]
        ad = thd + qvel[hcol]
        bd = ad + qvel[kcol]
        sa = np.sin(a)
        ca = np.cos(a)
        sb = np.sin(b)
        cb = np.cos(b)
        hx = qpos[0] + bx * c_t
        hz = qpos[1] - bx * s_t
        drx = -bx * s_t
        drz = -bx * c_t
        rbx = bx * c_t
        rbz = -bx * s_t
        cols[0] = 0
        cols[1] = 1
        cols[2] = 2
        cols[3] = hcol
        cols[4] = kcol
        # mass points: thigh COM, calf COM, foot; then contact points knee, foot
        for p in range(5):
            if p == 0:
                f1 = 0.5
                f2 = 0.0
                m = pm[0]
            elif p == 1:
                f1 = 1.0
                f2 = 0.5
                m = pm[1]
            elif p == 2:
                f1 = 1.0
                f2 = 1.0
                m = pm[2]
            elif p == 3:
                f1 = 1.0
                f2 = 0.0
                m = 0.0
            else:
                f1 = 1.0
                f2 = 1.0
                m = 0.0
            px = hx + f1 * l1 * (-sa) + f2 * l2 * (-sb)
            pz = hz + f1 * l1 * (-ca) + f2 * l2 * (-cb)
            jkx = f2 * l2 * (-cb)
            jkz = f2 * l2 * sb
            jhx = f1 * l1 * (-ca) + jkx
            jhz = f1 * l1 * sa + jkz
            jc[0, 0] = 1.0
            jc[0, 1] = 0.0
            jc[1, 0] = 0.0
            jc[1, 1] = 1.0
            jc[2, 0] = drx + jhx
            jc[2, 1] = drz + jhz
            jc[3, 0] = jhx
            jc[3, 1] = jhz
            jc[4, 0] = jkx
            jc[4, 1] = jkz
            if m > 0.0:
                bxa = -thd * thd * rbx - f1 * l1 * ad * ad * (-sa) - f2 * l2 * bd * bd * (-sb)
                bza = -thd * thd * rbz - f1 * l1 * ad * ad * (-ca) - f2 * l2 * bd * bd * (-cb) + g
                for i in range(5):
                    ci = cols[i]
                    Q[ci] -= m * (jc[i, 0] * bxa + jc[i, 1] * bza)
                    for j in range(5):
                        M[ci, cols[j]] += m * (jc[i, 0] * jc[j, 0] + jc[i, 1] * jc[j, 1])
            if p >= 3:
                c = leg if p == 4 else 4 + leg
                cpx[c] = px
                cpz[c] = pz
                for i in range(5):
                    ccol[c, i] = cols[i]
                    cJ[c, i, 0] = jc[i, 0]
                    cJ[c, i, 1] = jc[i, 1]

    for corner in range(2):
        c = 8 + corner
        bx = prm[P_CHL] if corner == 0 else -prm[P_CHL]
        bz = -prm[P_CHH]
        cpx[c] = qpos[0] + bx * c_t + bz * s_t
        cpz[c] = qpos[1] - bx * s_t + bz * c_t
        ccol[c, 0] = 0
        ccol[c, 1] = 1
        ccol[c, 2] = 2
        ccol[c, 3] = 2
        ccol[c, 4] = 2
        cJ[c, 0, 0] = 1.0
        cJ[c, 0, 1] = 0.0
        cJ[c, 1, 0] = 0.0
        cJ[c, 1, 1] = 1.0
        cJ[c, 2, 0] = -bx * s_t + bz * c_t
        cJ[c, 2, 1] = -bx * c_t - bz * s_t
        for i in range(3, 5):
            cJ[c, i, 0] = 0.0
            cJ[c, i, 1] = 0.0

    # normal / tangent jacobian rows
    Jn = np.zeros((NC, NG))
    Jt = np.zeros((NC, NG))
    pen = np.zeros(NC)
    vn = np.zeros(NC)
    for c in range(NC):
        h, slope = _terrain(grid, x0, dx, cpx[c])
        inv = 1.0 / np.sqrt(1.0 + slope * slope)
        nx = -slope * inv
        nz = inv
        tx = inv
        tz = slope * inv
        pen[c] = (h - cpz[c]) * inv
        for i in range(5):
            col = ccol[c, i]
            Jn[c, col] += nx * cJ[c, i, 0] + nz * cJ[c, i, 1]
            Jt[c, col] += tx * cJ[c, i, 0] + tz * cJ[c, i, 1]
        acc = 0.0
        for j in range(NG):
            acc += Jn[c, j] * qvel[j]
        vn[c] = acc
        if c < 4:
            vzc = 0.0
            for i in range(5):
                vzc += cJ[c, i, 1] * qvel[ccol[c, i]]
            vz_out[c] = vzc

    Mq = np.zeros(NG)
    for i in range(NG):
        acc = 0.0
        for j in range(NG):
            acc += M[i, j] * qvel[j]
        Mq[i] = acc + dt * Q[i]

    active = np.zeros(NC, np.bool_)
    for c in range(NC):
        active[c] = pen[c] > 0.0
        if not active[c]:
            slide[c] = False
    A = np.zeros((NG, NG))
    b = np.zeros(NG)
    qv = np.zeros(NG)
    fn = np.zeros(NC)
    ft = np.zeros(NC)
    vt = np.zeros(NC)
    for _ in range(MAX_ITERS):
        for i in range(NG):
            b[i] = Mq[i]
            for j in range(NG):
                A[i, j] = M[i, j]
        for c in range(NC):
            if not active[c]:
                continue
            wn = dt * Dn
            bn = dt * k * pen[c]
            for i in range(NG):
                jni = Jn[c, i]
                jti = Jt[c, i]
                if jni != 0.0:
                    b[i] += bn * jni
                    for j in range(NG):
                        A[i, j] += wn * jni * Jn[c, j]
                if jti != 0.0:
                    if slide[c]:
                        coef = mu * sgn[c]
                        b[i] -= coef * bn * jti
                        for j in range(NG):
                            A[i, j] -= coef * wn * jti * Jn[c, j]
                    else:
                        for j in range(NG):
                            A[i, j] += dt * ct * jti * Jt[c, j]
        _solve(A, b, qv)
        changed = False
        for c in range(NC):
            if not active[c]:
                fn[c] = 0.0
                ft[c] = 0.0
                continue
            vnn = 0.0
            vtt = 0.0
            for j in range(NG):
                vnn += Jn[c, j] * qv[j]
                vtt += Jt[c, j] * qv[j]
            vt[c] = vtt
            fn[c] = k * pen[c] - Dn * vnn
            if slide[c]:
                ft[c] = -mu * sgn[c] * fn[c]
            else:
                ft[c] = -ct * vtt
        for c in range(NC):
            if not active[c]:
                continue
            if fn[c] < 0.0:
                active[c] = False
                slide[c] = False
                changed = True
            elif (not slide[c]) and abs(ft[c]) > mu * fn[c]:
                slide[c] = True
                sgn[c] = -1.0 if ft[c] > 0.0 else 1.0
                changed = True
            elif slide[c] and vt[c] * sgn[c] <= 0.0:
                slide[c] = False
                changed = True
        if not changed:
            break

    for c in range(NC):
        if not active[c]:
            fn[c] = 0.0
    for i in range(NG):
        qvel[i] = qv[i]
        qpos[i] += dt * qv[i]
    for c in range(4):
        fn_out[c] = fn[c]
        vn_out[c] = vn[c]
    for c in range(NC):
        pen_out[c] = pen[c]


@njit(cache=True)
def control_step(qpos, qvel, q_des, grid, x0, dx, prm, trunk_mass, friction, m_const, pm, hip_bx,
                 lower, upper, time, slide, sgn, stance, zero_count, first_pen,
                 torque_out, drop_out, raise_out, collided_out, ev_env, ev_leg, ev_kind, ev_time, ev_vel):
    """Advance every environment by one control step in place.

    Event buffers receive (env, leg, kind, time, impact velocity) rows with
    kind 1 = touchdown, 0 = liftoff.  Returns the number of events written.
    """
    n = qpos.shape[0]
    nsub = int(prm[P_NSUB])
    dt = prm[P_DT]
    kp = prm[P_KP]
    kd = prm[P_KD]
    tlim = prm[P_TLIM]
    n_ev = 0
    tau = np.zeros(8)
    fn = np.zeros(4)
    vn = np.zeros(4)
    vz = np.zeros(4)
    pen = np.zeros(NC)
    for e in range(n):
        for leg in range(4):
            drop_out[e, leg] = 0.0
            raise_out[e, leg] = 0.0
        for i in range(5):
            collided_out[e, i] = False
        for _ in range(nsub):
            for j in range(8):
                t = kp * (q_des[e, j] - qpos[e, 3 + j]) - kd * qvel[e, 3 + j]
                if t > tlim:
                    t = tlim
                elif t < -tlim:
                    t = -tlim
                tau[j] = t
            _substep(qpos[e], qvel[e], tau, grid[e], x0, dx, prm, trunk_mass[e], friction[e],
                     m_const[e], pm, hip_bx, slide[e], sgn[e], fn, pen, vn, vz)
            for j in range(8):
                v = qpos[e, 3 + j]
                if v < lower[j]:
                    qpos[e, 3 + j] = lower[j]
                    if qvel[e, 3 + j] < 0.0:
                        qvel[e, 3 + j] = 0.0
                elif v > upper[j]:
                    qpos[e, 3 + j] = upper[j]
                    if qvel[e, 3 + j] > 0.0:
                        qvel[e, 3 + j] = 0.0
            time[e] += dt
            for leg in range(4):
                vzl = vz[leg]
                if vzl < 0.0:
                    drop_out[e, leg] += vzl * vzl
                else:
                    raise_out[e, leg] += vzl * vzl
                collided_out[e, leg] = collided_out[e, leg] or pen[4 + leg] > 0.0
                p = pen[leg]
                if (not stance[e, leg]) and p > 0.0 and first_pen[e, leg] < 0.0:
                    first_pen[e, leg] = max(0.0, -vn[leg])
                if stance[e, leg]:
                    if fn[leg] <= 0.0:
                        zero_count[e, leg] += 1
                    else:
                        zero_count[e, leg] = 0
                    if zero_count[e, leg] >= 2:
                        stance[e, leg] = False
                        zero_count[e, leg] = 0
                        ev_env[n_ev] = e
                        ev_leg[n_ev] = leg
                        ev_kind[n_ev] = 0
                        ev_time[n_ev] = time[e]
                        ev_vel[n_ev] = 0.0
                        n_ev += 1
                elif p > 0.0 and fn[leg] > 1.0:
                    stance[e, leg] = True
                    zero_count[e, leg] = 0
                    ev_env[n_ev] = e
                    ev_leg[n_ev] = leg
                    ev_kind[n_ev] = 1
                    ev_time[n_ev] = time[e]
                    ev_vel[n_ev] = max(first_pen[e, leg], 0.0)
                    n_ev += 1
                if (not stance[e, leg]) and p <= 0.0:
                    first_pen[e, leg] = -1.0
            collided_out[e, 4] = collided_out[e, 4] or pen[8] > 0.0 or pen[9] > 0.0
        for j in range(8):
            torque_out[e, j] = tau[j]
        for leg in range(4):
            drop_out[e, leg] /= nsub
            raise_out[e, leg] /= nsub
    return n_ev
