"""Compiled numerical kernels for the chain kinematics, the momentum-reduced
multibody dynamics, and the fixed-step mission integrators.

Everything here operates on plain float64 ndarrays so numba can compile it;
the public modules (`model`, `dynamics`, `sim`) wrap these functions with
validated, documented interfaces. Velocity-level conventions:

* all vectors are expressed in base-frame components unless noted;
* body positions are measured from the servicer system CoM, which is
  inertially fixed while the servicer is free of external forces (zero
  linear momentum), so the base-translation degrees of freedom are already
  eliminated from every quantity assembled here;
* quaternions are scalar-last, see `spatial`.

Raw telemetry row layout (38 columns), shared by all phase loops:
    0      t
    1:5    q_b      base attitude (inertial)
    5:8    w_b      base angular velocity (body)
    8:12   q_s      target attitude (inertial)
    12:15  w_s      target angular velocity (body)
    15:21  theta
    21:27  theta_dot
    27:30  h_r      wheel axial momenta (wheel-indexed)
    30:33  tau_r
    33:36  tau_e
    36     sigma
    37     phase code (0=A, 1=B, 2=captured coast, 3=C)
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


TELEM_COLS = 38

# loop exit status codes
STATUS_RAN_OUT = 0      # completed the requested number of steps
STATUS_EVENT = 1        # phase-exit condition met
STATUS_NONFINITE = 2    # NaN/Inf appeared in the state
STATUS_INFEASIBLE = 3   # sigma optimization infeasible at sigma = 0


# ---------------------------------------------------------------------------
# small vector / quaternion helpers
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _rodrigues(a, th):
    """Rotation matrix about unit axis a (components fixed) by angle th."""
    c = np.cos(th)
    s = np.sin(th)
    C = 1.0 - c
    R = np.empty((3, 3))
    R[0, 0] = c + a[0] * a[0] * C
    R[0, 1] = a[0] * a[1] * C - a[2] * s
    R[0, 2] = a[0] * a[2] * C + a[1] * s
    R[1, 0] = a[1] * a[0] * C + a[2] * s
    R[1, 1] = c + a[1] * a[1] * C
    R[1, 2] = a[1] * a[2] * C - a[0] * s
    R[2, 0] = a[2] * a[0] * C - a[1] * s
    R[2, 1] = a[2] * a[1] * C + a[0] * s
    R[2, 2] = c + a[2] * a[2] * C
    return R


@njit(cache=True)
def _quat_mul(p, q):
    out = np.empty(4)
    out[0] = p[3] * q[0] + q[3] * p[0] + p[1] * q[2] - p[2] * q[1]
    out[1] = p[3] * q[1] + q[3] * p[1] + p[2] * q[0] - p[0] * q[2]
    out[2] = p[3] * q[2] + q[3] * p[2] + p[0] * q[1] - p[1] * q[0]
    out[3] = p[3] * q[3] - p[0] * q[0] - p[1] * q[1] - p[2] * q[2]
    return out


@njit(cache=True)
def _quat_conj(q):
    out = np.empty(4)
    out[0] = -q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = q[3]
    return out


@njit(cache=True)
def _quat_mat(q):
    """Rotation matrix of a unit quaternion (no validation)."""
    x, y, z, w = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[0, 1] = 2.0 * (x * y - w * z)
    R[0, 2] = 2.0 * (x * z + w * y)
    R[1, 0] = 2.0 * (x * y + w * z)
    R[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[1, 2] = 2.0 * (y * z - w * x)
    R[2, 0] = 2.0 * (x * z - w * y)
    R[2, 1] = 2.0 * (y * z + w * x)
    R[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


@njit(cache=True)
def _quat_deriv(q, w):
    """0.5 * Omega(w) @ q for body angular velocity w."""
    out = np.empty(4)
    out[0] = 0.5 * (q[3] * w[0] + q[1] * w[2] - q[2] * w[1])
    out[1] = 0.5 * (q[3] * w[1] + q[2] * w[0] - q[0] * w[2])
    out[2] = 0.5 * (q[3] * w[2] + q[0] * w[1] - q[1] * w[0])
    out[3] = -0.5 * (w[0] * q[0] + w[1] * q[1] + w[2] * q[2])
    return out


@njit(cache=True)
def _quat_unit(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@njit(cache=True)
def _ctl_error(q_b, q_s):
    """Canonical attitude error of the base relative to the target frame.

    The vector part feeds the attitude loops: for a small base misalignment
    epsilon (base rotated by +epsilon from the target frame), the vector part
    is +epsilon/2, so a torque opposing it drives the short rotation home.
    """
    e = _quat_mul(_quat_conj(q_s), q_b)
    if e[3] < 0.0:
        e = -e
    return e


@njit(cache=True)
def _euler_free(ws, lam):
    """Torque-free axisymmetric Euler rate: wdot = lam*[wy*wz, -wx*wz, 0]."""
    out = np.empty(3)
    out[0] = lam * ws[1] * ws[2]
    out[1] = -lam * ws[0] * ws[2]
    out[2] = 0.0
    return out


# ---------------------------------------------------------------------------
# serial-chain kinematics (positions relative to the base CoM, base-frame axes)
# ---------------------------------------------------------------------------

@njit(cache=True)
def arm_kinematics(ax, off, cl, ee_off, theta):
    """Forward kinematics of the 6-R chain.

    Returns (R, o, p, z, x_ee, R_ee):
      R[j]   link-j rotation (link frame -> base frame)
      o[j]   joint-j origin, p[j] link-j CoM, both relative to the base CoM
      z[j]   joint-j axis in base components
      x_ee   end-effector point, R_ee its frame rotation
    """
    n = theta.shape[0]
    R = np.empty((n, 3, 3))
    o = np.empty((n, 3))
    p = np.empty((n, 3))
    z = np.empty((n, 3))
    Rprev = np.eye(3)
    oprev = np.zeros(3)
    for j in range(n):
        z[j] = Rprev @ ax[j]
        o[j] = oprev + Rprev @ off[j]
        Rj = Rprev @ _rodrigues(ax[j], theta[j])
        R[j] = Rj
        p[j] = o[j] + Rj @ cl[j]
        Rprev = Rj
        oprev = o[j]
    x_ee = oprev + Rprev @ ee_off
    return R, o, p, z, x_ee, Rprev.copy()


@njit(cache=True)
def arm_jacobians(ax, off, cl, ee_off, ml, Mtot, theta):
    """Geometric Jacobians of the link CoMs and the end-effector.

    Returns (Jp, Jr, Jp_ee, Jr_ee, Jrb, p, x_ee):
      Jp[k] (3,6)  d p_k / d theta       (relative to the base frame)
      Jr[k] (3,6)  angular-rate map of link k
      Jrb   (3,6)  d r_b / d theta where r_b is the base CoM relative to the
                   servicer system CoM: r_b = -(1/Mtot) * sum_k m_k p_k
    """
    n = theta.shape[0]
    R, o, p, z, x_ee, R_ee = arm_kinematics(ax, off, cl, ee_off, theta)
    Jp = np.zeros((n, 3, n))
    Jr = np.zeros((n, 3, n))
    for k in range(n):
        for j in range(k + 1):
            Jp[k, :, j] = _cross(z[j], p[k] - o[j])
            Jr[k, :, j] = z[j]
    Jp_ee = np.zeros((3, n))
    Jr_ee = np.zeros((3, n))
    for j in range(n):
        Jp_ee[:, j] = _cross(z[j], x_ee - o[j])
        Jr_ee[:, j] = z[j]
    Jrb = np.zeros((3, n))
    for k in range(n):
        Jrb -= ml[k] * Jp[k]
    Jrb /= Mtot
    return Jp, Jr, Jp_ee, Jr_ee, Jrb, p, x_ee


# ---------------------------------------------------------------------------
# momentum-reduced mass matrix and bias over u = (w_b, theta_dot)
# ---------------------------------------------------------------------------

@njit(cache=True)
def arm_mass_bias(ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, theta, wb, thd):
    """Assemble the 9x9 reduced inertia and the zero-acceleration bias.

    The (w_b, theta_dot) kinetic-energy matrix of base + links about the
    (inertially fixed) servicer CoM, and the generalized Coriolis/centrifugal
    vector obtained by projecting the Newton-Euler forces of every body at
    zero generalized acceleration. Wheel rotor terms are added by the caller.

    Returns (M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb) where r_b is
    the base CoM relative to the system CoM and rbd its base-frame-relative
    velocity.
    """
    n = theta.shape[0]

    # chain sweep: pose + base-relative velocity/acceleration products
    R = np.empty((n, 3, 3))
    o = np.empty((n, 3))
    p = np.empty((n, 3))
    z = np.empty((n, 3))
    w = np.empty((n, 3))
    wd = np.empty((n, 3))
    pd = np.empty((n, 3))
    pdd = np.empty((n, 3))
    Rprev = np.eye(3)
    oprev = np.zeros(3)
    wprev = np.zeros(3)
    wdprev = np.zeros(3)
    odprev = np.zeros(3)
    oddprev = np.zeros(3)
    for j in range(n):
        zj = Rprev @ ax[j]
        oj = oprev + Rprev @ off[j]
        do = oj - oprev
        odj = odprev + _cross(wprev, do)
        oddj = oddprev + _cross(wdprev, do) + _cross(wprev, _cross(wprev, do))
        wj = wprev + zj * thd[j]
        wdj = wdprev + _cross(wprev, zj) * thd[j]
        Rj = Rprev @ _rodrigues(ax[j], theta[j])
        rc = Rj @ cl[j]
        R[j] = Rj
        o[j] = oj
        z[j] = zj
        w[j] = wj
        wd[j] = wdj
        p[j] = oj + rc
        pd[j] = odj + _cross(wj, rc)
        pdd[j] = oddj + _cross(wdj, rc) + _cross(wj, _cross(wj, rc))
        Rprev = Rj
        oprev = oj
        wprev = wj
        wdprev = wdj
        odprev = odj
        oddprev = oddj
    x_ee = oprev + Rprev @ ee_off
    R_ee = Rprev.copy()

    # base CoM relative to the system CoM and its relative derivatives
    r_b = np.zeros(3)
    rbd = np.zeros(3)
    rbdd = np.zeros(3)
    for j in range(n):
        r_b -= ml[j] * p[j]
        rbd -= ml[j] * pd[j]
        rbdd -= ml[j] * pdd[j]
    r_b /= Mtot
    rbd /= Mtot
    rbdd /= Mtot

    # Jacobians
    Jp = np.zeros((n, 3, n))
    Jr = np.zeros((n, 3, n))
    for k in range(n):
        for j in range(k + 1):
            Jp[k, :, j] = _cross(z[j], p[k] - o[j])
            Jr[k, :, j] = z[j]
    Jp_ee = np.zeros((3, n))
    Jr_ee = np.zeros((3, n))
    for j in range(n):
        Jp_ee[:, j] = _cross(z[j], x_ee - o[j])
        Jr_ee[:, j] = z[j]
    Jrb = np.zeros((3, n))
    for k in range(n):
        Jrb -= ml[k] * Jp[k]
    Jrb /= Mtot

    M9 = np.zeros((9, 9))
    c9 = np.zeros(9)

    # accumulate one body: mass m at x (Jacobian Jx), inertia Iw, rate map Jw
    # base body first
    for body in range(n + 1):
        if body == 0:
            m = mb
            x = r_b
            Jx = Jrb
            Iw = Ib
            has_rot = False
            xd = rbd
            xdd = rbdd
            wk = np.zeros(3)
            wdk = np.zeros(3)
            Jrk = np.zeros((3, n))
        else:
            k = body - 1
            m = ml[k]
            x = r_b + p[k]
            Jx = Jrb + Jp[k]
            Iw = R[k] @ Il[k] @ R[k].T
            has_rot = True
            xd = rbd + pd[k]
            xdd = rbdd + pdd[k]
            wk = w[k]
            wdk = wd[k]
            Jrk = Jr[k]

        # inertia: [-[x ×] | Jx]^T m [-[x ×] | Jx] + [I | Jrk]^T Iw [I | Jrk]
        xsk = np.zeros((3, 3))
        xsk[0, 1] = -x[2]
        xsk[0, 2] = x[1]
        xsk[1, 0] = x[2]
        xsk[1, 2] = -x[0]
        xsk[2, 0] = -x[1]
        xsk[2, 1] = x[0]
        M9[:3, :3] += -m * (xsk @ xsk) + Iw
        cpl = m * (xsk @ Jx) + Iw @ Jrk
        M9[:3, 3:] += cpl
        M9[3:, :3] += cpl.T
        M9[3:, 3:] += m * (Jx.T @ Jx) + Jrk.T @ (Iw @ Jrk)

        # bias: inertial accelerations at zero generalized acceleration
        a = xdd + 2.0 * _cross(wb, xd) + _cross(wb, _cross(wb, x))
        om = wb + wk
        al = wdk + _cross(wb, om)
        f = m * a
        nn = Iw @ al + _cross(om, Iw @ om)
        c9[:3] += _cross(x, f) + nn
        c9[3:] += Jx.T @ f + Jrk.T @ nn

    return M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb


@njit(cache=True)
def wheel_bias(wb, h_r, Aw, W):
    """Gyroscopic torque on the base rows from stored wheel momentum.

    h_r holds the absolute axial momenta (wheel-indexed); the frozen-rotor
    inertia already sits inside the base tensor, so the correction is
    w x (Aw h_r) - w x (W w).
    """
    return _cross(wb, Aw @ h_r - W @ wb)


# ---------------------------------------------------------------------------
# cubic joint trajectory (normalized-time polynomial)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _cubic_eval(th_i, dth, tf, tau):
    """Position/rate/acceleration of the cubic profile at local time tau."""
    n = th_i.shape[0]
    th = np.empty(n)
    thd = np.empty(n)
    thdd = np.empty(n)
    if tf <= 0.0:
        for i in range(n):
            th[i] = th_i[i] + dth[i]
            thd[i] = 0.0
            thdd[i] = 0.0
        return th, thd, thdd
    s = tau / tf
    if s < 0.0:
        s = 0.0
    if s > 1.0:
        s = 1.0
    b = 3.0 * s * s - 2.0 * s * s * s
    bd = (6.0 * s - 6.0 * s * s) / tf
    bdd = (6.0 - 12.0 * s) / (tf * tf)
    for i in range(n):
        th[i] = th_i[i] + b * dth[i]
        thd[i] = bd * dth[i]
        thdd[i] = bdd * dth[i]
    return th, thd, thdd


# ---------------------------------------------------------------------------
# phase A: locked joints, wheel-driven spin matching
# ---------------------------------------------------------------------------

@njit(cache=True)
def _phase_a_rhs(y, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd):
    """State y = [q_b(4), w_b(3), q_s(4), w_s(3), h_r(3)]."""
    qb = y[0:4]
    wb = y[4:7]
    qs = y[7:11]
    ws = y[11:14]
    hr = y[14:17]

    Arel = _quat_mat(qb).T @ _quat_mat(qs)
    wrel = wb - Arel @ ws
    e = _ctl_error(qb, qs)
    cb = _cross(wb, Mb @ wb + Aw @ hr)
    taur = -(Binv @ (cb + Mb @ (kp * e[:3] + kd * wrel)))

    dy = np.empty(17)
    dy[0:4] = _quat_deriv(qb, wb)
    dy[4:7] = Mbinv @ (Bmap @ taur - cb)
    dy[7:11] = _quat_deriv(qs, ws)
    dy[11:14] = _euler_free(ws, lam)
    dy[14:17] = taur
    return dy, taur


@njit(cache=True)
def phase_a_loop(y, t, dt, max_steps, Mb, Mbinv, Bmap, Binv, Aw, lam,
                 kp, kd, w_tol, q_tol, dwell_steps, telem, every, row0,
                 theta, dwell0):
    """Integrate phase A until the synchronization dwell completes.

    Returns (steps_done, rows_written, status, dwell_count).
    """
    row = row0
    dwell = dwell0
    steps = 0
    for istep in range(max_steps):
        if istep % every == 0 and row < telem.shape[0]:
            d0, taur = _phase_a_rhs(y, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd)
            telem[row, 0] = t
            telem[row, 1:5] = y[0:4]
            telem[row, 5:8] = y[4:7]
            telem[row, 8:12] = y[7:11]
            telem[row, 12:15] = y[11:14]
            telem[row, 15:21] = theta
            telem[row, 21:27] = 0.0
            telem[row, 27:30] = y[14:17]
            telem[row, 30:33] = taur
            telem[row, 33:36] = 0.0
            telem[row, 36] = 0.0
            telem[row, 37] = 0.0
            row += 1

        k1, _ = _phase_a_rhs(y, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd)
        k2, _ = _phase_a_rhs(y + 0.5 * dt * k1, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd)
        k3, _ = _phase_a_rhs(y + 0.5 * dt * k2, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd)
        k4, _ = _phase_a_rhs(y + dt * k3, Mb, Mbinv, Bmap, Binv, Aw, lam, kp, kd)
        y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[0:4] = _quat_unit(y[0:4])
        y[7:11] = _quat_unit(y[7:11])
        t += dt
        steps = istep + 1

        ok = True
        for i in range(17):
            if not np.isfinite(y[i]):
                ok = False
        if not ok:
            return steps, row - row0, STATUS_NONFINITE, dwell

        qb = y[0:4]
        qs = y[7:11]
        Arel = _quat_mat(qb).T @ _quat_mat(qs)
        wrel = y[4:7] - Arel @ y[11:14]
        e = _ctl_error(qb, qs)
        qv = np.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2])
        if np.sqrt(wrel @ wrel) < w_tol and qv < q_tol:
            dwell += 1
        else:
            dwell = 0
        if dwell >= dwell_steps:
            return steps, row - row0, STATUS_EVENT, dwell

    return steps, row - row0, STATUS_RAN_OUT, dwell


# ---------------------------------------------------------------------------
# phase B: coordination control along the cubic capture trajectory
# ---------------------------------------------------------------------------

@njit(cache=True)
def _phase_b_rhs(y, t, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot,
                 Aw, W, Bmap, Binv, lam, th_i, dth, tf, t_start,
                 k_om, k_q, kp_j, kd_j):
    """State y = [q_b(4), w_b(3), q_s(4), w_s(3), theta(6), thd(6), h_r(3)]."""
    qb = y[0:4]
    wb = y[4:7]
    qs = y[7:11]
    ws = y[11:14]
    th = y[14:20]
    thd = y[20:26]
    hr = y[26:29]

    M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb = arm_mass_bias(
        ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, th, wb, thd)
    # reduce the wheel rotors into the base block
    A9 = M9.copy()
    A9[:3, :3] -= W
    cb = c9[:3] + wheel_bias(wb, hr, Aw, W)
    cm = c9[3:]

    Arel = _quat_mat(qb).T @ _quat_mat(qs)
    Aws = Arel @ ws
    wrel = wb - Aws
    e = _ctl_error(qb, qs)

    th_star, thd_star, thdd_star = _cubic_eval(th_i, dth, tf, t - t_start)

    # desired accelerations realizing the two uncoupled error systems
    wdot_des = -_cross(wrel, Aws) + Arel @ _euler_free(ws, lam) \
        - k_om * wrel - k_q * e[:3]
    thdd_des = thdd_star + kd_j * (thd_star - thd) + kp_j * (th_star - th)

    u_des = np.empty(9)
    u_des[:3] = wdot_des
    u_des[3:] = thdd_des
    gen = A9 @ u_des
    taur = Binv @ (gen[:3] + cb)
    taum = gen[3:] + cm

    rhs = np.empty(9)
    rhs[:3] = Bmap @ taur - cb
    rhs[3:] = taum - cm
    acc = np.linalg.solve(A9, rhs)

    dy = np.empty(29)
    dy[0:4] = _quat_deriv(qb, wb)
    dy[4:7] = acc[:3]
    dy[7:11] = _quat_deriv(qs, ws)
    dy[11:14] = _euler_free(ws, lam)
    dy[14:20] = thd
    dy[20:26] = acc[3:]
    dy[26:29] = taur
    return dy, taur


@njit(cache=True)
def phase_b_loop(y, t, dt, nsteps, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot,
                 Aw, W, Bmap, Binv, lam, th_i, dth, tf, t_start,
                 k_om, k_q, kp_j, kd_j, telem, every, row0):
    """Integrate the capture phase for exactly nsteps steps."""
    row = row0
    steps = 0
    for istep in range(nsteps):
        if istep % every == 0 and row < telem.shape[0]:
            d0, taur = _phase_b_rhs(y, t, ax, off, cl, Il, ml, ee_off, mb, Ib,
                                    Mtot, Aw, W, Bmap, Binv, lam, th_i, dth,
                                    tf, t_start, k_om, k_q, kp_j, kd_j)
            telem[row, 0] = t
            telem[row, 1:5] = y[0:4]
            telem[row, 5:8] = y[4:7]
            telem[row, 8:12] = y[7:11]
            telem[row, 12:15] = y[11:14]
            telem[row, 15:21] = y[14:20]
            telem[row, 21:27] = y[20:26]
            telem[row, 27:30] = y[26:29]
            telem[row, 30:33] = taur
            telem[row, 33:36] = 0.0
            telem[row, 36] = 0.0
            telem[row, 37] = 1.0
            row += 1

        k1, _ = _phase_b_rhs(y, t, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot,
                             Aw, W, Bmap, Binv, lam, th_i, dth, tf, t_start,
                             k_om, k_q, kp_j, kd_j)
        k2, _ = _phase_b_rhs(y + 0.5 * dt * k1, t + 0.5 * dt, ax, off, cl, Il,
                             ml, ee_off, mb, Ib, Mtot, Aw, W, Bmap, Binv, lam,
                             th_i, dth, tf, t_start, k_om, k_q, kp_j, kd_j)
        k3, _ = _phase_b_rhs(y + 0.5 * dt * k2, t + 0.5 * dt, ax, off, cl, Il,
                             ml, ee_off, mb, Ib, Mtot, Aw, W, Bmap, Binv, lam,
                             th_i, dth, tf, t_start, k_om, k_q, kp_j, kd_j)
        k4, _ = _phase_b_rhs(y + dt * k3, t + dt, ax, off, cl, Il, ml, ee_off,
                             mb, Ib, Mtot, Aw, W, Bmap, Binv, lam, th_i, dth,
                             tf, t_start, k_om, k_q, kp_j, kd_j)
        y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[0:4] = _quat_unit(y[0:4])
        y[7:11] = _quat_unit(y[7:11])
        t += dt
        steps = istep + 1

        ok = True
        for i in range(29):
            if not np.isfinite(y[i]):
                ok = False
        if not ok:
            return steps, row - row0, STATUS_NONFINITE

    return steps, row - row0, STATUS_RAN_OUT


# ---------------------------------------------------------------------------
# unactuated free flight (conservation studies)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _free_rhs(y, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, Aw, W):
    """State y = [q_b(4), w_b(3), theta(6), thd(6), h_r(3)]; all torques zero."""
    qb = y[0:4]
    wb = y[4:7]
    th = y[7:13]
    thd = y[13:19]
    hr = y[19:22]

    M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb = arm_mass_bias(
        ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, th, wb, thd)
    A9 = M9.copy()
    A9[:3, :3] -= W
    rhs = np.empty(9)
    rhs[:3] = -(c9[:3] + wheel_bias(wb, hr, Aw, W))
    rhs[3:] = -c9[3:]
    acc = np.linalg.solve(A9, rhs)

    dy = np.empty(22)
    dy[0:4] = _quat_deriv(qb, wb)
    dy[4:7] = acc[:3]
    dy[7:13] = thd
    dy[13:19] = acc[3:]
    dy[19:22] = 0.0
    return dy


@njit(cache=True)
def free_float_loop(y, t, dt, nsteps, ax, off, cl, Il, ml, ee_off, mb, Ib,
                    Mtot, Aw, W, out_h, every):
    """Unactuated flight; records the inertial momentum norm every `every` steps.

    out_h rows: [t, hx, hy, hz] (inertial components about the system CoM).
    """
    row = 0
    for istep in range(nsteps):
        if istep % every == 0 and row < out_h.shape[0]:
            M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb = arm_mass_bias(
                ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot,
                y[7:13], y[4:7], y[13:19])
            hb = (M9[:3, :3] - W) @ y[4:7] + M9[:3, 3:] @ y[13:19] + Aw @ y[19:22]
            hi = _quat_mat(y[0:4]) @ hb
            out_h[row, 0] = t
            out_h[row, 1:4] = hi
            row += 1
        k1 = _free_rhs(y, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, Aw, W)
        k2 = _free_rhs(y + 0.5 * dt * k1, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, Aw, W)
        k3 = _free_rhs(y + 0.5 * dt * k2, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, Aw, W)
        k4 = _free_rhs(y + dt * k3, ax, off, cl, Il, ml, ee_off, mb, Ib, Mtot, Aw, W)
        y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[0:4] = _quat_unit(y[0:4])
        t += dt
    return row


# ---------------------------------------------------------------------------
# captured coast and phase C detumbling (rigid compound)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _compound_ct(wb, hr, Mt, Aw):
    return _cross(wb, Mt @ wb + Aw @ hr)


@njit(cache=True)
def _compound_cs(wb, Ic, ms, varrho, rho_s):
    return _cross(wb, Ic @ wb) - ms * _cross(varrho, _cross(wb, _cross(wb, rho_s)))


@njit(cache=True)
def _largest_root(a, b, c):
    """Largest sigma with a*s^2 + b*s + c <= 0; (value, ok) with inf = unbounded."""
    tiny = 1e-300
    if a > tiny:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return 0.0, False
        return (-b + np.sqrt(disc)) / (2.0 * a), True
    if b < -tiny:
        return np.inf, True
    if b > tiny:
        return -c / b, True
    # constraint independent of sigma
    if c <= 0.0:
        return np.inf, True
    return 0.0, False


@njit(cache=True)
def sigma_closed_form(wb, hr, Mt, Mtinv, Ms, G, Binv, Aw, Ic, ms, varrho,
                      rho_s, taur_max, taue_max, eps_h, literal_c1):
    """Constrained momentum-decay rate sigma = min of the two largest roots.

    Returns (sigma, h, status): status 0 ok, 1 below-threshold (shut off),
    2 infeasible at sigma = 0.
    """
    hvec = Mt @ wb
    h = np.sqrt(hvec @ hvec)
    if h <= eps_h:
        return 0.0, h, 1
    ct = _compound_ct(wb, hr, Mt, Aw)
    cs = _compound_cs(wb, Ic, ms, varrho, rho_s)
    cg = Ms @ (Mtinv @ ct) - cs

    u = Binv @ (hvec / h)
    v = Binv @ ct
    lim1 = taue_max if literal_c1 else taur_max
    a1 = u @ u
    b1 = -2.0 * (u @ v)
    c1 = v @ v - lim1 * lim1
    Gu = G @ u
    Gv = G @ v + cg
    a2 = Gu @ Gu
    b2 = -2.0 * (Gu @ Gv)
    c2 = Gv @ Gv - taue_max * taue_max

    feas_tol = 1e-9 * (1.0 + taur_max * taur_max + taue_max * taue_max)
    if c1 > feas_tol or c2 > feas_tol:
        return 0.0, h, 2
    s1, ok1 = _largest_root(a1, b1, c1)
    s2, ok2 = _largest_root(a2, b2, c2)
    if not (ok1 and ok2):
        return 0.0, h, 2
    s = min(s1, s2)
    if s < 0.0:
        s = 0.0
    return s, h, 0


@njit(cache=True)
def _phase_c_rhs(y, dt, Mt, Mtinv, Ms, G, Bmap, Binv, Aw, Ic, ms, varrho,
                 rho_s, taur_max, taue_max, eps_h, literal_c1, active):
    """State y = [q_b(4), w_b(3), h_r(3)]; active=False coasts with zero torque.

    The commanded decay rate is capped at h/dt so the fixed-step integration
    contracts through the shutoff threshold instead of chattering around it
    (the constant-rate law is non-Lipschitz at h = 0).
    """
    qb = y[0:4]
    wb = y[4:7]
    hr = y[7:10]

    ct = _compound_ct(wb, hr, Mt, Aw)
    taur = np.zeros(3)
    sigma = 0.0
    status = 0
    if active:
        sigma, h, status = sigma_closed_form(
            wb, hr, Mt, Mtinv, Ms, G, Binv, Aw, Ic, ms, varrho, rho_s,
            taur_max, taue_max, eps_h, literal_c1)
        if status == 0:
            if sigma > h / dt:
                sigma = h / dt
            hvec = Mt @ wb
            taur = Binv @ (ct - (hvec / h) * sigma)

    cs = _compound_cs(wb, Ic, ms, varrho, rho_s)
    cg = Ms @ (Mtinv @ ct) - cs
    taue = G @ taur + cg

    dy = np.empty(10)
    dy[0:4] = _quat_deriv(qb, wb)
    dy[4:7] = Mtinv @ (Bmap @ taur - ct)
    dy[7:10] = taur
    return dy, taur, taue, sigma, status


@njit(cache=True)
def phase_c_loop(y, t, dt, max_steps, Mt, Mtinv, Ms, G, Bmap, Binv, Aw, Ic,
                 ms, varrho, rho_s, taur_max, taue_max, eps_h, literal_c1,
                 active, telem, every, row0, theta, phase_code):
    """Integrate the rigid compound; with active control exits once the
    momentum magnitude falls below eps_h.

    Returns (steps_done, rows_written, status).
    """
    row = row0
    steps = 0
    for istep in range(max_steps):
        d0, taur, taue, sigma, status = _phase_c_rhs(
            y, dt, Mt, Mtinv, Ms, G, Bmap, Binv, Aw, Ic, ms, varrho, rho_s,
            taur_max, taue_max, eps_h, literal_c1, active)
        if active and status == 2:
            return steps, row - row0, STATUS_INFEASIBLE
        if istep % every == 0 and row < telem.shape[0]:
            telem[row, 0] = t
            telem[row, 1:5] = y[0:4]
            telem[row, 5:8] = y[4:7]
            telem[row, 8:12] = y[0:4]
            telem[row, 12:15] = y[4:7]
            telem[row, 15:21] = theta
            telem[row, 21:27] = 0.0
            telem[row, 27:30] = y[7:10]
            telem[row, 30:33] = taur
            telem[row, 33:36] = taue
            telem[row, 36] = sigma
            telem[row, 37] = phase_code
            row += 1

        k1, _, _, _, s1 = _phase_c_rhs(y, dt, Mt, Mtinv, Ms, G, Bmap, Binv,
                                       Aw, Ic, ms, varrho, rho_s, taur_max,
                                       taue_max, eps_h, literal_c1, active)
        k2, _, _, _, s2 = _phase_c_rhs(y + 0.5 * dt * k1, dt, Mt, Mtinv, Ms,
                                       G, Bmap, Binv, Aw, Ic, ms, varrho,
                                       rho_s, taur_max, taue_max, eps_h,
                                       literal_c1, active)
        k3, _, _, _, s3 = _phase_c_rhs(y + 0.5 * dt * k2, dt, Mt, Mtinv, Ms,
                                       G, Bmap, Binv, Aw, Ic, ms, varrho,
                                       rho_s, taur_max, taue_max, eps_h,
                                       literal_c1, active)
        k4, _, _, _, s4 = _phase_c_rhs(y + dt * k3, dt, Mt, Mtinv, Ms, G,
                                       Bmap, Binv, Aw, Ic, ms, varrho, rho_s,
                                       taur_max, taue_max, eps_h, literal_c1,
                                       active)
        y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        y[0:4] = _quat_unit(y[0:4])
        t += dt
        steps = istep + 1

        ok = True
        for i in range(10):
            if not np.isfinite(y[i]):
                ok = False
        if not ok:
            return steps, row - row0, STATUS_NONFINITE

        if active:
            hvec = Mt @ y[4:7]
            if np.sqrt(hvec @ hvec) <= eps_h:
                return steps, row - row0, STATUS_EVENT

    return steps, row - row0, STATUS_RAN_OUT
