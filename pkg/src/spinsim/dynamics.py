"""Equations of motion of the servicer, the free target, and the rigidized
compound, plus the end-effector wrench maps.

The base translation is eliminated through linear-momentum conservation, so
the generalized velocities are (w_b, theta_dot, wheel rates). Wheel rotors are
carried analytically: their frozen (locked-rotor) inertia lives inside the
base tensor, the axial rotor states enter through the coupling blocks, and
the stored axial momenta h_r (d h_r / dt = tau_r exactly) contribute the
gyroscopic bias w x (A_w h_r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, model as model_mod, spatial
from .errors import ConfigError, SimulationError


@dataclass(frozen=True)
class WheelMatrices:
    """Constant wheel-cluster maps: axes A_w, resolved axial inertia W,
    coupling M_br, rotor inertia M_r, and the torque map B = -M_br M_r^-1."""
    Aw: np.ndarray
    W: np.ndarray
    M_br: np.ndarray
    M_r: np.ndarray
    B: np.ndarray
    Binv: np.ndarray


@dataclass(frozen=True)
class RobotInertiaSet:
    """Blocks of the full free-flying inertia over (w_b, theta_dot, wheel rates)."""
    Mb_tilde: np.ndarray  # 3x3
    M_bm: np.ndarray      # 3x6
    M_br: np.ndarray      # 3x3
    M_m: np.ndarray       # 6x6
    M_r: np.ndarray       # 3x3
    cb_tilde: np.ndarray  # 3
    c_m: np.ndarray       # 6
    c_r: np.ndarray       # 3
    J_b: np.ndarray       # 6x3: wrench-to-base generalized force map (transposed)
    J_m: np.ndarray       # 6x6: wrench-to-joint map (transposed)
    r_b: np.ndarray       # base CoM relative to the system CoM
    rb_dot: np.ndarray    # its base-frame-relative rate


@dataclass(frozen=True)
class ReducedDynamics:
    """Base-attitude dynamics after the wheel rows are folded in:
    M_b wdot + c_b = B tau_r (+ end-effector terms)."""
    M_b: np.ndarray
    c_b: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class CompoundDynamics:
    """Rigidized servicer+target about the base attitude: M_t wdot + c_t = B tau_r,
    with the end-effector torque following tau_e = G tau_r + c_g."""
    M_t: np.ndarray
    c_t: np.ndarray
    M_s: np.ndarray
    c_s: np.ndarray
    G: np.ndarray
    c_g: np.ndarray
    rho_s: np.ndarray      # target CoM relative to the compound CoM (base frame)
    B: np.ndarray
    target_mass: float
    varrho: np.ndarray     # grasp offset in base components
    I_c: np.ndarray
    Aw: np.ndarray


def wheel_matrices(model: model_mod.SystemModel) -> WheelMatrices:
    Aw = model.wheels.axes
    M_r = np.diag(model.wheels.inertia)
    M_br = Aw @ M_r
    W = M_br @ Aw.T
    try:
        B = -M_br @ np.linalg.inv(M_r)
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        raise ConfigError("wheels: rotor inertia matrix is singular") from None
    return WheelMatrices(Aw=Aw, W=0.5 * (W + W.T), M_br=M_br, M_r=M_r,
                         B=B, Binv=Binv)


def assemble(model: model_mod.SystemModel, theta, omega_b, theta_dot,
             wheel_momentum=None) -> RobotInertiaSet:
    """Populate every inertia block and nonlinear term of the free-flying robot.

    Inertia via direct summation of the body kinetic-energy quadratic form
    over the momentum-reduced Jacobians; nonlinear terms via projected
    Newton-Euler forces at zero generalized acceleration. `wheel_momentum`
    (stored axial momenta, wheel-indexed) adds the rotor gyroscopic bias.
    """
    theta = np.asarray(theta, dtype=float)
    omega_b = np.asarray(omega_b, dtype=float)
    theta_dot = np.asarray(theta_dot, dtype=float)
    geom = model.packed_geometry()
    wm = wheel_matrices(model)
    M9, c9, r_b, rbd, x_ee, R_ee, Jp_ee, Jr_ee, Jrb = _kernels.arm_mass_bias(
        *geom, theta, omega_b, theta_dot)

    cb = c9[:3].copy()
    if wheel_momentum is not None:
        hr = np.asarray(wheel_momentum, dtype=float)
        cb += np.cross(omega_b, wm.Aw @ hr - wm.W @ omega_b)

    x_sys = r_b + x_ee
    J_b = np.vstack([-spatial.skew(x_sys), np.eye(3)])
    J_m = np.vstack([Jrb + Jp_ee, Jr_ee])
    return RobotInertiaSet(
        Mb_tilde=M9[:3, :3], M_bm=M9[:3, 3:], M_br=wm.M_br, M_m=M9[3:, 3:],
        M_r=wm.M_r, cb_tilde=cb, c_m=c9[3:], c_r=np.zeros(3),
        J_b=J_b, J_m=J_m, r_b=r_b, rb_dot=rbd)


def reduce(rset: RobotInertiaSet) -> ReducedDynamics:
    """Fold the wheel rows into the base block: B = -M_br M_r^-1."""
    if abs(np.linalg.det(rset.M_r)) < 1e-12:
        raise ConfigError("wheel rotor inertia M_r is singular")
    B = -rset.M_br @ np.linalg.inv(rset.M_r)
    M_b = rset.Mb_tilde + B @ rset.M_br.T
    c_b = rset.cb_tilde + B @ rset.c_r
    return ReducedDynamics(M_b=M_b, c_b=c_b, B=B)


def full_inertia(rset: RobotInertiaSet) -> np.ndarray:
    """The 12x12 generalized inertia over (w_b, theta_dot, wheel rates)."""
    M = np.zeros((12, 12))
    M[:3, :3] = rset.Mb_tilde
    M[:3, 3:9] = rset.M_bm
    M[3:9, :3] = rset.M_bm.T
    M[3:9, 3:9] = rset.M_m
    M[:3, 9:] = rset.M_br
    M[9:, :3] = rset.M_br.T
    M[9:, 9:] = rset.M_r
    return M


def target_euler_rate(model: model_mod.SystemModel, omega_s) -> np.ndarray:
    """Torque-free rate of the axisymmetric target: lam*[wy wz, -wx wz, 0]."""
    lam = model.target.spin_asymmetry
    w = np.asarray(omega_s, dtype=float)
    return np.array([lam * w[1] * w[2], -lam * w[0] * w[2], 0.0])


def compound(model: model_mod.SystemModel, theta_locked, omega_b,
             wheel_momentum=None, rho_b=None, varrho_b=None) -> CompoundDynamics:
    """Dynamics of the rigidly connected stack under aligned frames.

    `rho_b` is the target CoM relative to the servicer CoM in base components
    (defaults to the configured displacement), `varrho_b` the grasp offset in
    base components. The equivalent inertia follows from eliminating the
    grasp wrench between the locked-robot equation and the target equation;
    it equals the parallel-axis compound inertia minus the wheel reduction.
    """
    theta_locked = np.asarray(theta_locked, dtype=float)
    omega_b = np.asarray(omega_b, dtype=float)
    hr = np.zeros(3) if wheel_momentum is None else np.asarray(wheel_momentum, float)
    D = model.initial.rho if rho_b is None else np.asarray(rho_b, dtype=float)
    varrho = (model.target.grasp_offset if varrho_b is None
              else np.asarray(varrho_b, dtype=float))

    wm = wheel_matrices(model)
    rd = reduce(assemble(model, theta_locked, np.zeros(3), np.zeros(6)))
    m_s = model.target.mass
    m_srv = model.servicer_mass
    m_all = m_s + m_srv
    I_c = model.target.inertia

    S = (m_srv / m_all) * D
    Dx = spatial.skew(D)
    M_t = rd.M_b + I_c - m_s * (m_srv / m_all) * (Dx @ Dx)
    try:
        Mt_inv = np.linalg.inv(M_t)
    except np.linalg.LinAlgError:
        raise SimulationError(
            f"compound inertia is singular (cond {np.linalg.cond(M_t):.3e})") from None

    c_t = np.cross(omega_b, M_t @ omega_b + wm.Aw @ hr)
    c_s = (np.cross(omega_b, I_c @ omega_b)
           - m_s * np.cross(varrho, np.cross(omega_b, np.cross(omega_b, S))))
    M_s = I_c + m_s * spatial.skew(varrho) @ spatial.skew(S)
    G = -M_s @ Mt_inv @ wm.B
    c_g = M_s @ (Mt_inv @ c_t) - c_s
    return CompoundDynamics(M_t=M_t, c_t=c_t, M_s=M_s, c_s=c_s, G=G, c_g=c_g,
                            rho_s=S, B=wm.B, target_mass=m_s, varrho=varrho,
                            I_c=I_c, Aw=wm.Aw)


def end_effector_force(cd: CompoundDynamics, omega_b, omega_b_dot) -> np.ndarray:
    """Grasp force sustaining the target CoM motion on the rigid compound:
    f_e = -m_s (wdot x rho_s + w x (w x rho_s))."""
    w = np.asarray(omega_b, dtype=float)
    wd = np.asarray(omega_b_dot, dtype=float)
    return -cd.target_mass * (np.cross(wd, cd.rho_s)
                              + np.cross(w, np.cross(w, cd.rho_s)))


def torque_transmission(cd: CompoundDynamics, tau_r) -> np.ndarray:
    """End-effector torque produced by a wheel torque: tau_e = G tau_r + c_g."""
    return cd.G @ np.asarray(tau_r, dtype=float) + cd.c_g


def forward_dynamics(model: model_mod.SystemModel, theta, omega_b, theta_dot,
                     wheel_momentum, tau_r, tau_m, n_e=None, locked=False):
    """Generalized accelerations (wdot_b, thetadd) from applied torques.

    With `locked` the joints are absent degrees of freedom and the reduced
    3x3 base system is solved; otherwise the full 9x9 system. `n_e` is an
    optional end-effector wrench (f_e, tau_e) acting on the arm tip.
    """
    rset = assemble(model, theta, omega_b, theta_dot, wheel_momentum)
    rd = reduce(rset)
    tau_r = np.asarray(tau_r, dtype=float)
    rhs_b = rd.B @ tau_r - rd.c_b
    rhs_m = np.asarray(tau_m, dtype=float) - rset.c_m
    if n_e is not None:
        n_e = np.asarray(n_e, dtype=float)
        rhs_b = rhs_b + rset.J_b.T @ n_e
        rhs_m = rhs_m + rset.J_m.T @ n_e
    if locked:
        wdot = np.linalg.solve(rd.M_b, rhs_b)
        return wdot, np.zeros(6)
    A = np.zeros((9, 9))
    A[:3, :3] = rd.M_b
    A[:3, 3:] = rset.M_bm
    A[3:, :3] = rset.M_bm.T
    A[3:, 3:] = rset.M_m
    acc = np.linalg.solve(A, np.concatenate([rhs_b, rhs_m]))
    if not np.isfinite(acc).all():
        raise SimulationError("forward dynamics produced non-finite accelerations")
    return acc[:3], acc[3:]


def servicer_momentum(model: model_mod.SystemModel, theta, omega_b, theta_dot,
                      wheel_momentum) -> np.ndarray:
    """Servicer angular momentum about its own CoM, base components:
    M_b w + M_bm thd + A_w h_r."""
    rset = assemble(model, theta, omega_b, theta_dot)
    rd = reduce(rset)
    wm = wheel_matrices(model)
    return (rd.M_b @ np.asarray(omega_b, float)
            + rset.M_bm @ np.asarray(theta_dot, float)
            + wm.Aw @ np.asarray(wheel_momentum, float))
