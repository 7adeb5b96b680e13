"""Fixed-step RK4 mission integrator, phase sequencing, event detection,
telemetry, and the angular-momentum ledger.

Mission timeline: phase A spins the base up to the target rotation with the
arm locked; phase B unlocks the joints and tracks the cubic capture
trajectory while holding the spin match; at capture the joints relock, the
stack is rigidized with momentum carried over, and after a settle window
phase C transfers the compound momentum into the wheels until its magnitude
falls below the shutoff threshold.

Locked joints are removed from the integrated state (absent degrees of
freedom), so conservation checks are not polluted by servo stiffness.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels, control, dynamics, model as model_mod, spatial
from .errors import InfeasibleError, SimulationError

CSV_HEADER = ("t,wrel_x,wrel_y,wrel_z,q1,q2,q3,q0,rrel_x,rrel_y,rrel_z,"
              "taur_x,taur_y,taur_z,taue_x,taue_y,taue_z,"
              "h_target,h_servicer,h_wheels,V,sigma,phase")

_PHASE_LETTER = {0: "A", 1: "B", 2: "B", 3: "C", 4: "D"}

EVENT_NAMES = ("synch_starts", "capture_starts", "capture_completes",
               "detumbling_starts", "detumbling_completes")


@dataclass
class SystemState:
    """Full dynamic state. Locked phases keep theta frozen and theta_dot zero;
    after rigidization the target attitude and rate mirror the base."""
    t: float
    q_b: np.ndarray
    omega_b: np.ndarray
    q_s: np.ndarray
    omega_s: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    h_r: np.ndarray
    phase: str  # 'A' | 'B' | 'C' | 'DONE'

    def copy(self) -> "SystemState":
        return SystemState(
            t=self.t, q_b=self.q_b.copy(), omega_b=self.omega_b.copy(),
            q_s=self.q_s.copy(), omega_s=self.omega_s.copy(),
            theta=self.theta.copy(), theta_dot=self.theta_dot.copy(),
            h_r=self.h_r.copy(), phase=self.phase)


@dataclass(frozen=True)
class MissionEvents:
    """Transition times (s); entries are None when a run stops early."""
    t0: float | None = None
    t1: float | None = None
    t2: float | None = None
    t3: float | None = None
    t4: float | None = None

    def as_rows(self):
        labels = ("t0", "t1", "t2", "t3", "t4")
        times = (self.t0, self.t1, self.t2, self.t3, self.t4)
        return [(lbl, name, t) for lbl, name, t in zip(labels, EVENT_NAMES, times)
                if t is not None]


@dataclass(frozen=True)
class CompoundContext:
    """Geometry and matrices of the rigidized stack, frozen at capture."""
    cd: dynamics.CompoundDynamics
    Mt_inv: np.ndarray
    Mb_locked: np.ndarray   # servicer about its own CoM, wheel-reduced
    D: np.ndarray           # target CoM relative to servicer CoM (base frame)
    d_servicer: np.ndarray  # servicer CoM relative to compound CoM (base frame)
    theta: np.ndarray
    r_rel: np.ndarray       # grasp-to-EE residual frozen at capture (base frame)
    eta_rel: np.ndarray


def initial_state(model: model_mod.SystemModel) -> SystemState:
    """Mission start: servicer at rest with parked arm, target spinning."""
    q_s = spatial.QUAT_IDENTITY.copy()
    q_b = spatial.quat_mul(q_s, spatial.quat_conjugate(model.initial.q_rel))
    q_b = spatial.quat_normalize(q_b)
    return SystemState(
        t=0.0, q_b=q_b, omega_b=np.zeros(3), q_s=q_s,
        omega_s=model.initial.omega_s.copy(), theta=model.initial.theta_i.copy(),
        theta_dot=np.zeros(6), h_r=np.zeros(3), phase="A")


def relative_motion(state: SystemState):
    """(q_rel, omega_rel, q_err): target-relative-to-base attitude, the
    relative rate in base components, and the control error (base w.r.t.
    target, canonical)."""
    q_rel = spatial.quat_error(state.q_s, state.q_b)
    A_rel = spatial.quat_to_rotmat(state.q_b).T @ spatial.quat_to_rotmat(state.q_s)
    omega_rel = state.omega_b - A_rel @ state.omega_s
    q_err = spatial.quat_canonical(spatial.quat_conjugate(q_rel))
    return q_rel, omega_rel, q_err


def detect_transition(state: SystemState, model: model_mod.SystemModel,
                      dwell_count: int, t_capture_due: float | None = None,
                      t_detumble_due: float | None = None,
                      compound: CompoundContext | None = None):
    """Evaluate the phase-exit predicate for the current state.

    Returns (event_name_or_None, next_dwell_count). Phase A exits once the
    relative rate and attitude stay inside tolerance for a full dwell window;
    phase B exits on schedule (capture at trajectory end, then the settle
    window); phase C exits when the compound momentum drops below eps_h.
    """
    sim = model.sim
    if state.phase == "A":
        _, omega_rel, q_err = relative_motion(state)
        inside = (np.linalg.norm(omega_rel) < sim.omega_tol
                  and np.linalg.norm(q_err[:3]) < sim.q_tol)
        dwell_count = dwell_count + 1 if inside else 0
        if dwell_count >= int(round(sim.dwell / sim.dt)):
            return "capture_starts", dwell_count
        return None, dwell_count
    if state.phase == "B":
        if t_capture_due is not None and state.t >= t_capture_due - 0.5 * sim.dt:
            return "capture_completes", 0
        if t_detumble_due is not None and state.t >= t_detumble_due - 0.5 * sim.dt:
            return "detumbling_starts", 0
        return None, 0
    if state.phase == "C" and compound is not None:
        h = np.linalg.norm(compound.cd.M_t @ state.omega_b)
        if h <= model.gains.eps_h:
            return "detumbling_completes", 0
        return None, 0
    return None, dwell_count


class Telemetry:
    """Decimated mission records: raw integrator state plus derived columns."""

    def __init__(self, model, raw: np.ndarray, columns: dict):
        self.model = model
        self.raw = raw
        self.columns = columns

    def __len__(self):
        return self.raw.shape[0]

    @property
    def t(self):
        return self.raw[:, 0]

    def csv_rows(self):
        c = self.columns
        for i in range(len(self)):
            vals = [self.raw[i, 0]]
            vals += list(c["omega_rel"][i])
            vals += list(c["q_rel"][i])
            vals += list(c["r_rel"][i])
            vals += list(self.raw[i, 30:33])
            vals += list(self.raw[i, 33:36])
            vals += [c["h_target"][i], c["h_servicer"][i], c["h_wheels"][i],
                     c["V"][i], self.raw[i, 36]]
            letter = _PHASE_LETTER[int(self.raw[i, 37])]
            yield "%s,%s" % (",".join("%.17g" % v for v in vals), letter)

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write(CSV_HEADER + "\n")
            for row in self.csv_rows():
                f.write(row + "\n")


@dataclass
class MissionResult:
    model: model_mod.SystemModel
    telemetry: Telemetry
    events: MissionEvents
    summary: dict
    final_state: SystemState
    capture: dict | None = None
    compound: CompoundContext | None = None


# ---------------------------------------------------------------------------
# internal helpers
# ---------------------------------------------------------------------------

def _locked_reduced(model, theta, collect=False):
    rset = dynamics.assemble(model, theta, np.zeros(3), np.zeros(6))
    rd = dynamics.reduce(rset)
    return (rd, rset) if collect else rd


def _wheel_mats(model):
    return dynamics.wheel_matrices(model)


def _spin_consistent_wheels(model, theta, omega_b):
    """Wheel momenta leaving the spinning servicer with zero net momentum."""
    rd = _locked_reduced(model, theta)
    wm = _wheel_mats(model)
    return np.linalg.solve(wm.Aw, -(rd.M_b @ omega_b))


def _rigidize(model, state: SystemState) -> tuple[SystemState, CompoundContext]:
    """Lock the joints, attach the target, and carry the momentum over.

    Both CoMs are at rest at capture, so the compound momentum is the plain
    sum of the two bodies' momenta; the post-capture base rate solves
    M_t w+ = M_b w- + A_rel I_c w_s. The target attitude snaps onto the base
    (the residual misalignment at capture is inside the capture tolerance).
    """
    R_b = spatial.quat_to_rotmat(state.q_b)
    R_s = spatial.quat_to_rotmat(state.q_s)
    A_rel = R_b.T @ R_s
    D = R_b.T @ model.initial.rho
    varrho_B = A_rel @ model.target.grasp_offset

    rd = _locked_reduced(model, state.theta)
    cd = dynamics.compound(model, state.theta, state.omega_b,
                           wheel_momentum=state.h_r, rho_b=D, varrho_b=varrho_B)
    h_pre = rd.M_b @ state.omega_b + A_rel @ (model.target.inertia @ state.omega_s)
    omega_plus = np.linalg.solve(cd.M_t, h_pre)

    m_s = model.target.mass
    m_all = m_s + model.servicer_mass
    d_srv = -(m_s / m_all) * D

    fk = model_mod.forward_kinematics(model, state.theta)
    r_b = model_mod.base_com_offset(model, state.theta)
    grasp_B = R_b.T @ model.initial.rho + A_rel @ model.target.grasp_offset
    r_rel = grasp_B - (r_b + fk.r)
    eta_grasp = spatial.quat_mul(spatial.quat_error(state.q_s, state.q_b),
                                 model.target.grasp_attitude)
    eta_rel = spatial.quat_error(eta_grasp, fk.eta)

    new = state.copy()
    new.q_s = state.q_b.copy()
    new.omega_b = omega_plus
    new.omega_s = omega_plus.copy()
    new.theta_dot = np.zeros(6)
    ctx = CompoundContext(cd=cd, Mt_inv=np.linalg.inv(cd.M_t), Mb_locked=rd.M_b,
                          D=D, d_servicer=d_srv, theta=state.theta.copy(),
                          r_rel=r_rel, eta_rel=eta_rel)
    return new, ctx


def _capture_report(model, state: SystemState) -> dict:
    """Grasp-pose and relative-velocity errors at the capture instant."""
    R_b = spatial.quat_to_rotmat(state.q_b)
    A_rel = R_b.T @ spatial.quat_to_rotmat(state.q_s)
    fk = model_mod.forward_kinematics(model, state.theta)
    r_b = model_mod.base_com_offset(model, state.theta)
    Jp_ee, Jr_ee = model_mod.ee_jacobians(model, state.theta)
    Jrb = model_mod.com_jacobian(model, state.theta)

    grasp_B = R_b.T @ model.initial.rho + A_rel @ model.target.grasp_offset
    r_rel = grasp_B - (r_b + fk.r)
    eta_grasp = spatial.quat_mul(spatial.quat_error(state.q_s, state.q_b),
                                 model.target.grasp_attitude)
    eta_rel = spatial.quat_error(eta_grasp, fk.eta)

    v_rel = (-np.cross(state.omega_b, grasp_B)
             + A_rel @ np.cross(state.omega_s, model.target.grasp_offset)
             - (Jrb + Jp_ee) @ state.theta_dot)
    w_rel = (A_rel @ state.omega_s - state.omega_b) - Jr_ee @ state.theta_dot
    return {
        "position_error_m": float(np.linalg.norm(r_rel)),
        "attitude_error": float(np.linalg.norm(eta_rel[:3])),
        "linear_velocity_m_s": float(np.linalg.norm(v_rel)),
        "angular_velocity_rad_s": float(np.linalg.norm(w_rel)),
        "joint_rate_rad_s": float(np.linalg.norm(state.theta_dot)),
        "base_com_rate_m_s": float(np.linalg.norm(Jrb @ state.theta_dot)),
    }


def momentum_ledger(model, state: SystemState,
                    compound: CompoundContext | None = None) -> dict:
    """Angular momenta of target, servicer body, and wheels in the inertial
    frame, each about the relevant CoM, plus their conserved sum."""
    R_b = spatial.quat_to_rotmat(state.q_b)
    wm = _wheel_mats(model)
    h_wheels = R_b @ (wm.Aw @ state.h_r)
    if state.phase in ("C", "DONE") and compound is not None:
        S = compound.cd.rho_s
        d1 = compound.d_servicer
        Sx = spatial.skew(S)
        d1x = spatial.skew(d1)
        h_target = R_b @ ((model.target.inertia
                           - model.target.mass * (Sx @ Sx)) @ state.omega_b)
        h_serv = R_b @ ((compound.Mb_locked
                         - model.servicer_mass * (d1x @ d1x)) @ state.omega_b)
    else:
        R_s = spatial.quat_to_rotmat(state.q_s)
        h_target = R_s @ (model.target.inertia @ state.omega_s)
        h_serv = R_b @ (dynamics.servicer_momentum(
            model, state.theta, state.omega_b, state.theta_dot,
            np.zeros(3)))
    return {
        "h_target": h_target,
        "h_servicer": h_serv,
        "h_wheels": h_wheels,
        "h_total": h_target + h_serv + h_wheels,
    }


def _target_step(model, q_s, omega_s, dt):
    """One RK4 step of the free axisymmetric target."""
    qs = q_s.copy()
    ws = omega_s.copy()
    k1 = spatial.quat_derivative(qs, ws)
    w1 = dynamics.target_euler_rate(model, ws)
    k2 = spatial.quat_derivative(qs + 0.5 * dt * k1, ws + 0.5 * dt * w1)
    w2 = dynamics.target_euler_rate(model, ws + 0.5 * dt * w1)
    k3 = spatial.quat_derivative(qs + 0.5 * dt * k2, ws + 0.5 * dt * w2)
    w3 = dynamics.target_euler_rate(model, ws + 0.5 * dt * w2)
    k4 = spatial.quat_derivative(qs + dt * k3, ws + dt * w3)
    w4 = dynamics.target_euler_rate(model, ws + dt * w3)
    qs = spatial.quat_normalize(qs + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    ws = ws + dt / 6 * (w1 + 2 * w2 + 2 * w3 + w4)
    return qs, ws


# ---------------------------------------------------------------------------
# single-step integration (public wrapper over the compiled loops)
# ---------------------------------------------------------------------------

def rk4_step(model, state: SystemState, dt: float, *,
             traj: control.JointTrajectory | None = None,
             traj_start: float = 0.0,
             compound: CompoundContext | None = None,
             controlled: bool = True) -> SystemState:
    """Advance one classic RK4 step through the phase-appropriate dynamics.

    Phase 'B' needs the capture trajectory; phase 'C' the rigidized context
    (built from the configured geometry when omitted). `controlled=False`
    integrates the unactuated plant of the current phase.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    gains = model.gains
    wm = _wheel_mats(model)
    lam = model.target.spin_asymmetry
    dummy = np.empty((0, _kernels.TELEM_COLS))
    new = state.copy()

    if state.phase == "A":
        rd = _locked_reduced(model, state.theta)
        if controlled:
            y = np.concatenate([state.q_b, state.omega_b, state.q_s,
                                state.omega_s, state.h_r])
            steps, rows, status, dwell = _kernels.phase_a_loop(
                y, state.t, dt, 1, rd.M_b, np.linalg.inv(rd.M_b), rd.B,
                np.linalg.inv(rd.B), wm.Aw, lam, gains.kp_att, gains.kd_att,
                0.0, 0.0, 2, dummy, 1 << 30, 0, state.theta, 0)
            if status == _kernels.STATUS_NONFINITE:
                raise SimulationError(
                    f"non-finite state after step at t={state.t}: {y}")
            new.q_b, new.omega_b = y[0:4], y[4:7]
            new.q_s, new.omega_s = y[7:11], y[11:14]
            new.h_r = y[14:17]
        else:
            # unactuated locked coast of the servicer alone
            y = np.concatenate([state.q_b, state.omega_b, state.h_r])
            zero3 = np.zeros((3, 3))
            steps, rows, status = _kernels.phase_c_loop(
                y, state.t, dt, 1, rd.M_b, np.linalg.inv(rd.M_b), zero3,
                zero3, rd.B, np.linalg.inv(rd.B), wm.Aw, zero3, 0.0,
                np.zeros(3), np.zeros(3), 1.0, 1.0, gains.eps_h, False,
                False, dummy, 1 << 30, 0, state.theta, 0.0)
            if status == _kernels.STATUS_NONFINITE:
                raise SimulationError(
                    f"non-finite state after step at t={state.t}: {y}")
            new.q_b, new.omega_b = y[0:4], y[4:7]
            new.h_r = y[7:10]
            # free target rides along
            new.q_s, new.omega_s = _target_step(model, state.q_s,
                                                state.omega_s, dt)
    elif state.phase == "B":
        geom = model.packed_geometry()
        y = np.concatenate([state.q_b, state.omega_b, state.q_s, state.omega_s,
                            state.theta, state.theta_dot, state.h_r])
        if controlled:
            if traj is None:
                raise ValueError("phase B stepping requires the capture trajectory")
            steps, rows, status = _kernels.phase_b_loop(
                y, state.t, dt, 1, *geom, wm.Aw, wm.W, wm.B, wm.Binv, lam,
                traj.theta_i, traj.delta, traj.t_f, traj_start,
                gains.k_omega, gains.k_q, gains.kp_joint, gains.kd_joint,
                dummy, 1 << 30, 0)
            if status == _kernels.STATUS_NONFINITE:
                raise SimulationError(f"non-finite state after step at t={state.t}")
            new.q_b, new.omega_b = y[0:4], y[4:7]
            new.q_s, new.omega_s = y[7:11], y[11:14]
            new.theta, new.theta_dot = y[14:20], y[20:26]
            new.h_r = y[26:29]
        else:
            yf = np.concatenate([state.q_b, state.omega_b, state.theta,
                                 state.theta_dot, state.h_r])
            hbuf = np.empty((0, 4))
            _kernels.free_float_loop(yf, state.t, dt, 1, *geom, wm.Aw, wm.W,
                                     hbuf, 1 << 30)
            if not np.isfinite(yf).all():
                raise SimulationError(f"non-finite state after step at t={state.t}")
            new.q_b, new.omega_b = yf[0:4], yf[4:7]
            new.theta, new.theta_dot = yf[7:13], yf[13:19]
            new.h_r = yf[19:22]
            new.q_s, new.omega_s = _target_step(model, state.q_s,
                                                state.omega_s, dt)
    elif state.phase == "C":
        if compound is None:
            st = state.copy()
            st, compound = _rigidize(model, st)
        cd = compound.cd
        y = np.concatenate([state.q_b, state.omega_b, state.h_r])
        steps, rows, status = _kernels.phase_c_loop(
            y, state.t, dt, 1, cd.M_t, compound.Mt_inv, cd.M_s, cd.G, cd.B,
            np.linalg.inv(cd.B), cd.Aw, cd.I_c, cd.target_mass, cd.varrho,
            cd.rho_s, model.limits.tau_r_max, model.limits.tau_e_max,
            gains.eps_h, False, controlled, dummy, 1 << 30, 0,
            compound.theta, 3.0)
        if status == _kernels.STATUS_NONFINITE:
            raise SimulationError(f"non-finite state after step at t={state.t}")
        if status == _kernels.STATUS_INFEASIBLE:
            raise InfeasibleError(f"detumbling infeasible at t={state.t}")
        new.q_b, new.omega_b = y[0:4], y[4:7]
        new.h_r = y[7:10]
        new.q_s = new.q_b.copy()
        new.omega_s = new.omega_b.copy()
    else:
        raise ValueError(f"cannot step phase {state.phase!r}")
    new.t = state.t + dt
    return new


# ---------------------------------------------------------------------------
# mission runner
# ---------------------------------------------------------------------------

def run_mission(model: model_mod.SystemModel, *, duration: float | None = None,
                dt: float | None = None, telemetry_every: int | None = None,
                phase_only: str | None = None,
                appendix_literal: bool = False) -> MissionResult:
    """Execute the guidance sequence and return telemetry, events, summary.

    Deterministic: a given configuration yields a bit-identical telemetry
    stream. Raises SimulationError when a phase fails to converge inside the
    configured horizon and InfeasibleError when the detumbling allocation
    has no feasible decay rate.
    """
    t_start_wall = time.perf_counter()
    dt = model.sim.dt if dt is None else float(dt)
    if dt <= 0.0:
        raise SimulationError("dt must be > 0")
    t_end = model.sim.t_end if duration is None else float(duration)
    every = model.sim.telemetry_every if telemetry_every is None else int(telemetry_every)
    gains = model.gains
    lam = model.target.spin_asymmetry
    wm = _wheel_mats(model)
    geom = model.packed_geometry()

    max_steps_total = int(np.ceil(t_end / dt)) + 8
    telem = np.zeros((max_steps_total // every + 64, _kernels.TELEM_COLS))
    nrows = 0

    events = {}
    capture = None
    ctx = None
    state = initial_state(model)
    t = 0.0

    def fail(msg):
        raise SimulationError(msg)

    # --- phase A ----------------------------------------------------------
    if phase_only in (None, "A"):
        events["t0"] = 0.0
        rd = _locked_reduced(model, state.theta)
        y = np.concatenate([state.q_b, state.omega_b, state.q_s,
                            state.omega_s, state.h_r])
        dwell_steps = max(1, int(round(model.sim.dwell / dt)))
        steps, rows, status, dwell = _kernels.phase_a_loop(
            y, t, dt, max_steps_total, rd.M_b, np.linalg.inv(rd.M_b), rd.B,
            np.linalg.inv(rd.B), wm.Aw, lam, gains.kp_att, gains.kd_att,
            model.sim.omega_tol, model.sim.q_tol, dwell_steps,
            telem, every, nrows, state.theta, 0)
        nrows += rows
        t += steps * dt
        state.q_b, state.omega_b = y[0:4], y[4:7]
        state.q_s, state.omega_s = y[7:11], y[11:14]
        state.h_r = y[14:17]
        state.t = t
        if status == _kernels.STATUS_NONFINITE:
            fail(f"phase A diverged (non-finite state at t={t:.3f}): {y}")
        if status == _kernels.STATUS_RAN_OUT:
            fail(f"phase A did not converge within {t_end:.1f} s "
                 f"(spin synchronization timeout)")
        events["t1"] = t
        state.phase = "B"
    else:
        # synchronized start for phase-only B / C runs
        state.q_b = spatial.QUAT_IDENTITY.copy()
        state.q_s = spatial.QUAT_IDENTITY.copy()
        state.omega_b = model.initial.omega_s.copy()
        state.omega_s = model.initial.omega_s.copy()
        state.phase = "B"

    # --- phase B ----------------------------------------------------------
    theta_f = None
    if phase_only != "A":
        theta_f = model_mod.solve_final_joints(
            model, model.initial.rho, model.target.grasp_offset,
            model.target.grasp_attitude)

    if phase_only in (None, "B"):
        if phase_only == "B":
            state.h_r = _spin_consistent_wheels(model, state.theta, state.omega_b)
        traj = control.plan_capture_trajectory(
            state.theta, theta_f, model.limits.qd_max, model.limits.qdd_max)
        n_b = int(np.ceil(traj.t_f / dt)) if traj.t_f > 0 else 0
        if t + n_b * dt > t_end:
            fail(f"capture trajectory (t_f={traj.t_f:.1f} s) does not fit "
                 f"inside the mission horizon {t_end:.1f} s")
        y = np.concatenate([state.q_b, state.omega_b, state.q_s, state.omega_s,
                            state.theta, state.theta_dot, state.h_r])
        steps, rows, status = _kernels.phase_b_loop(
            y, t, dt, n_b, *geom, wm.Aw, wm.W, wm.B, wm.Binv, lam,
            traj.theta_i, traj.delta, traj.t_f, t,
            gains.k_omega, gains.k_q, gains.kp_joint, gains.kd_joint,
            telem, every, nrows)
        nrows += rows
        t += steps * dt
        state.q_b, state.omega_b = y[0:4], y[4:7]
        state.q_s, state.omega_s = y[7:11], y[11:14]
        state.theta, state.theta_dot = y[14:20], y[20:26]
        state.h_r = y[26:29]
        state.t = t
        if status == _kernels.STATUS_NONFINITE:
            fail(f"phase B diverged (non-finite state at t={t:.3f})")
        events["t2"] = t
        capture = _capture_report(model, state)

    # --- rigidization + settle coast --------------------------------------
    if phase_only in (None, "B", "C"):
        if phase_only == "C":
            state.theta = theta_f.copy()
            state.theta_dot = np.zeros(6)
            state.h_r = _spin_consistent_wheels(model, theta_f, state.omega_b)
        state, ctx = _rigidize(model, state)
        state.phase = "C"
        cd = ctx.cd

        n_settle = int(round(model.sim.settle / dt)) if phase_only in (None, "B") else 0
        if n_settle > 0:
            y = np.concatenate([state.q_b, state.omega_b, state.h_r])
            steps, rows, status = _kernels.phase_c_loop(
                y, t, dt, n_settle, cd.M_t, ctx.Mt_inv, cd.M_s, cd.G, cd.B,
                np.linalg.inv(cd.B), cd.Aw, cd.I_c, cd.target_mass, cd.varrho,
                cd.rho_s, model.limits.tau_r_max, model.limits.tau_e_max,
                gains.eps_h, appendix_literal, False, telem, every, nrows,
                ctx.theta, 2.0)
            nrows += rows
            t += steps * dt
            state.q_b, state.omega_b = y[0:4], y[4:7]
            state.h_r = y[7:10]
            state.q_s = state.q_b.copy()
            state.omega_s = state.omega_b.copy()
            state.t = t
            if status == _kernels.STATUS_NONFINITE:
                fail(f"post-capture coast diverged at t={t:.3f}")
        events["t3"] = t

    # --- phase C ----------------------------------------------------------
    if phase_only in (None, "C"):
        cd = ctx.cd
        remaining = max_steps_total - int(round(t / dt))
        if remaining <= 0:
            fail("no integration budget left for detumbling")
        y = np.concatenate([state.q_b, state.omega_b, state.h_r])
        steps, rows, status = _kernels.phase_c_loop(
            y, t, dt, remaining, cd.M_t, ctx.Mt_inv, cd.M_s, cd.G, cd.B,
            np.linalg.inv(cd.B), cd.Aw, cd.I_c, cd.target_mass, cd.varrho,
            cd.rho_s, model.limits.tau_r_max, model.limits.tau_e_max,
            gains.eps_h, appendix_literal, True, telem, every, nrows,
            ctx.theta, 3.0)
        nrows += rows
        t += steps * dt
        state.q_b, state.omega_b = y[0:4], y[4:7]
        state.h_r = y[7:10]
        state.q_s = state.q_b.copy()
        state.omega_s = state.omega_b.copy()
        state.t = t
        if status == _kernels.STATUS_NONFINITE:
            fail(f"phase C diverged (non-finite state at t={t:.3f})")
        if status == _kernels.STATUS_INFEASIBLE:
            raise InfeasibleError(
                "detumbling infeasible: bias torques exceed a limit at sigma=0 "
                f"(t={t:.3f} s)")
        if status == _kernels.STATUS_RAN_OUT:
            fail(f"detumbling did not complete within {t_end:.1f} s")
        events["t4"] = t
        state.phase = "DONE"

    # final record
    if nrows < telem.shape[0]:
        row = telem[nrows]
        row[0] = t
        row[1:5] = state.q_b
        row[5:8] = state.omega_b
        row[8:12] = state.q_s
        row[12:15] = state.omega_s
        row[15:21] = state.theta
        row[21:27] = state.theta_dot
        row[27:30] = state.h_r
        row[30:36] = 0.0
        row[36] = 0.0
        row[37] = {"A": 0.0, "B": 1.0, "C": 3.0, "DONE": 4.0}[state.phase]
        nrows += 1

    raw = telem[:nrows].copy()
    columns = _derive_columns(model, raw, ctx)
    telemetry = Telemetry(model, raw, columns)
    ev = MissionEvents(**{k: events.get(k) for k in ("t0", "t1", "t2", "t3", "t4")})
    summary = _summarize(model, telemetry, ev, capture,
                         wall=time.perf_counter() - t_start_wall)
    return MissionResult(model=model, telemetry=telemetry, events=ev,
                         summary=summary, final_state=state, capture=capture,
                         compound=ctx)


# ---------------------------------------------------------------------------
# derived telemetry and summary
# ---------------------------------------------------------------------------

def _derive_columns(model, raw, ctx: CompoundContext | None) -> dict:
    n = raw.shape[0]
    geom = model.packed_geometry()
    ax, off, cl, Il, ml, ee, mb, Ib, Mtot = geom
    wm = _wheel_mats(model)
    kp = model.gains.kp_att
    I_c = model.target.inertia
    m_s = model.target.mass

    out = {
        "q_rel": np.zeros((n, 4)),
        "omega_rel": np.zeros((n, 3)),
        "r_rel": np.zeros((n, 3)),
        "eta_rel": np.zeros((n, 4)),
        "v_rel": np.zeros((n, 3)),
        "w_rel_ee": np.zeros((n, 3)),
        "h_target": np.zeros(n),
        "h_servicer": np.zeros(n),
        "h_wheels": np.zeros(n),
        "h_total": np.zeros((n, 3)),
        "V": np.zeros(n),
    }
    for i in range(n):
        q_b = raw[i, 1:5]
        w_b = raw[i, 5:8]
        q_s = raw[i, 8:12]
        w_s = raw[i, 12:15]
        th = raw[i, 15:21]
        thd = raw[i, 21:27]
        hr = raw[i, 27:30]
        pc = int(raw[i, 37])

        R_b = spatial.quat_to_rotmat(spatial.quat_normalize(q_b))
        R_s = spatial.quat_to_rotmat(spatial.quat_normalize(q_s))
        A_rel = R_b.T @ R_s
        q_rel = spatial.quat_error(q_s, q_b)
        w_rel = w_b - A_rel @ w_s
        out["q_rel"][i] = q_rel
        out["omega_rel"][i] = w_rel
        out["V"][i] = 2.0 * kp * (1.0 - q_rel[3]) + 0.5 * (w_rel @ w_rel)
        h_wheels_vec = R_b @ (wm.Aw @ hr)
        out["h_wheels"][i] = np.linalg.norm(h_wheels_vec)

        if pc <= 1:  # phases A and B: separate bodies
            M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb = \
                _kernels.arm_mass_bias(*geom, th, w_b, thd)
            grasp_B = R_b.T @ model.initial.rho + A_rel @ model.target.grasp_offset
            out["r_rel"][i] = grasp_B - (r_b + x_ee)
            eta_grasp = spatial.quat_mul(q_rel, model.target.grasp_attitude)
            out["eta_rel"][i] = spatial.quat_error(
                eta_grasp, spatial.rotmat_to_quat(R_ee))
            out["v_rel"][i] = (-np.cross(w_b, grasp_B)
                               + A_rel @ np.cross(w_s, model.target.grasp_offset)
                               - (Jrb + Jp_ee) @ thd)
            out["w_rel_ee"][i] = (A_rel @ w_s - w_b) - Jr_ee @ thd
            h_t = R_s @ (I_c @ w_s)
            h_s = R_b @ ((M9[:3, :3] - wm.W) @ w_b + M9[:3, 3:] @ thd)
        else:  # rigidized stack
            if ctx is None:
                raise SimulationError("rigidized telemetry without compound context")
            out["r_rel"][i] = ctx.r_rel
            out["eta_rel"][i] = ctx.eta_rel
            Sx = spatial.skew(ctx.cd.rho_s)
            d1x = spatial.skew(ctx.d_servicer)
            h_t = R_b @ ((I_c - m_s * (Sx @ Sx)) @ w_b)
            h_s = R_b @ ((ctx.Mb_locked
                          - model.servicer_mass * (d1x @ d1x)) @ w_b)
        out["h_target"][i] = np.linalg.norm(h_t)
        out["h_servicer"][i] = np.linalg.norm(h_s)
        out["h_total"][i] = h_t + h_s + h_wheels_vec
    return out


def _summarize(model, telemetry: Telemetry, events: MissionEvents,
               capture: dict | None, wall: float) -> dict:
    raw = telemetry.raw
    c = telemetry.columns
    taur_n = np.linalg.norm(raw[:, 30:33], axis=1)
    taue_n = np.linalg.norm(raw[:, 33:36], axis=1)
    in_c = raw[:, 37] == 3.0
    sigma_c = raw[in_c, 36]
    # the torque-norm limits constrain the detumbling allocation (phase C)
    violations = int((taur_n[in_c] > model.limits.tau_r_max + 1e-9).sum()
                     + (taue_n[in_c] > model.limits.tau_e_max + 1e-9).sum())
    h_t0 = float(c["h_target"][0])
    h_w_end = float(c["h_wheels"][-1])
    return {
        "events": {k: getattr(events, k) for k in ("t0", "t1", "t2", "t3", "t4")},
        "h_target_initial": h_t0,
        "h_target_final": float(c["h_target"][-1]),
        "h_servicer_initial": float(c["h_servicer"][0]),
        "h_servicer_final": float(c["h_servicer"][-1]),
        "h_wheels_initial": float(c["h_wheels"][0]),
        "h_wheels_final": h_w_end,
        "transfer_ratio": (h_w_end / h_t0) if h_t0 > 0 else 0.0,
        "peak_tau_r": float(taur_n.max()) if len(taur_n) else 0.0,
        "peak_tau_e": float(taue_n.max()) if len(taue_n) else 0.0,
        "peak_tau_r_detumble": float(taur_n[in_c].max()) if in_c.any() else 0.0,
        "peak_tau_e_detumble": float(taue_n[in_c].max()) if in_c.any() else 0.0,
        "torque_limit_violations": violations,
        "sigma_min": float(sigma_c.min()) if sigma_c.size else 0.0,
        "sigma_max": float(sigma_c.max()) if sigma_c.size else 0.0,
        "capture": capture,
        "wall_time_s": wall,
    }


def emit_summary(result: MissionResult) -> str:
    """Human-readable run report."""
    s = result.summary
    lines = ["mission summary", "==============="]
    for key, name in zip(("t0", "t1", "t2", "t3", "t4"), EVENT_NAMES):
        tv = s["events"][key]
        lines.append(f"{name:22s} {'-' if tv is None else f'{tv:10.3f} s'}")
    lines.append("")
    lines.append(f"|h_target|  initial = {s['h_target_initial']:.6f} N m s, "
                 f"final = {s['h_target_final']:.6e} N m s")
    lines.append(f"|h_servicer| initial = {s['h_servicer_initial']:.6f}, "
                 f"final = {s['h_servicer_final']:.6e} N m s")
    lines.append(f"|h_wheels|  initial = {s['h_wheels_initial']:.6f}, "
                 f"final = {s['h_wheels_final']:.6f} N m s")
    lines.append(f"momentum transfer ratio |h_wheels(end)| / |h_target(start)| "
                 f"= {s['transfer_ratio']:.4f}")
    lines.append("")
    lines.append(f"peak |tau_r| = {s['peak_tau_r']:.6f} N m over the mission, "
                 f"{s['peak_tau_r_detumble']:.6f} N m while detumbling "
                 f"(limit {result.model.limits.tau_r_max})")
    lines.append(f"peak |tau_e| = {s['peak_tau_e']:.6f} N m over the mission, "
                 f"{s['peak_tau_e_detumble']:.6f} N m while detumbling "
                 f"(limit {result.model.limits.tau_e_max})")
    lines.append(f"torque-limit violations while detumbling: "
                 f"{s['torque_limit_violations']}")
    lines.append(f"sigma range: [{s['sigma_min']:.6f}, {s['sigma_max']:.6f}] N m")
    if s["capture"] is not None:
        cap = s["capture"]
        lines.append("")
        lines.append("capture accuracy:")
        lines.append(f"  pose error     {cap['position_error_m']:.3e} m / "
                     f"{cap['attitude_error']:.3e}")
        lines.append(f"  rel. velocity  {cap['linear_velocity_m_s']:.3e} m/s / "
                     f"{cap['angular_velocity_rad_s']:.3e} rad/s")
    lines.append("")
    lines.append(f"wall time: {s['wall_time_s']:.2f} s")
    return "\n".join(lines)


def write_events(result: MissionResult, path):
    with open(path, "w") as f:
        f.write("event,name,t_s\n")
        for lbl, name, tv in result.events.as_rows():
            f.write("%s,%s,%.17g\n" % (lbl, name, tv))
