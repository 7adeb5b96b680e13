"""Phase controllers: wheel-driven spin matching (A), coordinated capture
along a cubic joint trajectory (B), and constrained momentum-decay
detumbling with a closed-form optimal decay rate (C).

Attitude errors passed to the controllers are the canonical relative
quaternion of the *base with respect to the target* (scalar part >= 0), so
the proportional term k_p * q_v always commands the short rotation toward
alignment. `omega_rel = w_b - A w_s` is expressed in base components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import CompoundDynamics, ReducedDynamics, RobotInertiaSet
from .errors import ConfigError, InfeasibleError


def _positive(value: float, name: str) -> float:
    if value <= 0.0:
        raise ConfigError(f"{name}: must be > 0")
    return float(value)


@dataclass(frozen=True)
class GainsA:
    """Spin-matching feedback gains: k_p (1/s^2) on the attitude error vector,
    k_d (1/s) on the relative rate."""
    k_p: float
    k_d: float

    def __post_init__(self):
        _positive(self.k_p, "GainsA.k_p")
        _positive(self.k_d, "GainsA.k_d")


@dataclass(frozen=True)
class GainsB:
    """Coordination gains: (k_p, k_d) close the joint loop, (k_omega, k_q)
    the base attitude loop."""
    k_p: float
    k_d: float
    k_omega: float
    k_q: float

    def __post_init__(self):
        for name in ("k_p", "k_d", "k_omega", "k_q"):
            _positive(getattr(self, name), f"GainsB.{name}")


@dataclass(frozen=True)
class TorqueLimits:
    tau_r_max: float
    tau_e_max: float

    def __post_init__(self):
        _positive(self.tau_r_max, "TorqueLimits.tau_r_max")
        _positive(self.tau_e_max, "TorqueLimits.tau_e_max")


@dataclass(frozen=True)
class JointTrajectory:
    """Cubic rest-to-rest joint profile over [0, t_f] in normalized time."""
    theta_i: np.ndarray
    theta_f: np.ndarray
    t_f: float

    @property
    def delta(self) -> np.ndarray:
        return self.theta_f - self.theta_i

    def evaluate(self, t: float):
        """(theta*, thetad*, thetadd*) at local time t, clamped to [0, t_f]."""
        d = self.delta
        if self.t_f <= 0.0:
            return self.theta_f.copy(), np.zeros_like(d), np.zeros_like(d)
        s = min(max(t / self.t_f, 0.0), 1.0)
        pos = self.theta_i + (3.0 * s * s - 2.0 * s ** 3) * d
        rate = (6.0 * s - 6.0 * s * s) / self.t_f * d
        acc = (6.0 - 12.0 * s) / self.t_f ** 2 * d
        return pos, rate, acc


def plan_capture_trajectory(theta_i, theta_f, qd_max: float,
                            qdd_max: float) -> JointTrajectory:
    """Minimum-time cubic respecting the joint rate and acceleration limits.

    The peak rate of the cubic occurs at mid-span and the peak acceleration
    at the endpoints, which gives the closed-form terminal time
    t_f = max( 3 |dth|_inf / (2 qd_max), sqrt(6 |dth|_inf / qdd_max) ).
    """
    _positive(qd_max, "qd_max")
    _positive(qdd_max, "qdd_max")
    theta_i = np.asarray(theta_i, dtype=float)
    theta_f = np.asarray(theta_f, dtype=float)
    span = np.abs(theta_f - theta_i).max()
    if span == 0.0:
        return JointTrajectory(theta_i=theta_i, theta_f=theta_f, t_f=0.0)
    t_f = max(1.5 * span / qd_max, np.sqrt(6.0 * span / qdd_max))
    return JointTrajectory(theta_i=theta_i, theta_f=theta_f, t_f=t_f)


def phase_a_torque(q_err, omega_rel, rd: ReducedDynamics,
                   gains: GainsA) -> np.ndarray:
    """Wheel torque matching the base spin to the target:
    tau_r = -B^-1 (c_b + M_b (k_p q_v + k_d omega_rel)).

    `q_err` is the canonical base-relative-to-target error quaternion.
    """
    if abs(np.linalg.det(rd.B)) < 1e-12:
        raise ConfigError("wheel torque map B is singular")
    qv = np.asarray(q_err, dtype=float)[:3]
    w = np.asarray(omega_rel, dtype=float)
    return -np.linalg.solve(rd.B, rd.c_b + rd.M_b @ (gains.k_p * qv + gains.k_d * w))


def phase_b_torques(q_err, omega_rel, a_ws, a_phi_s, theta, theta_dot,
                    traj: JointTrajectory, rd: ReducedDynamics,
                    rset: RobotInertiaSet, gains: GainsB, t: float):
    """Coordination torques tracking the capture trajectory while holding the
    spin match.

    `a_ws` is the target rate mapped into base components (A w_s) and
    `a_phi_s` its free Euler acceleration mapped likewise. Inverting the
    reduced dynamics against the commanded accelerations uncouples the
    closed loop into thdd~ + k_d thd~ + k_p th~ = 0 and
    wdot_rel + k_omega w_rel + k_q q_v = 0.
    """
    if abs(np.linalg.det(rset.M_br)) < 1e-12:
        raise ConfigError("wheel coupling M_br is singular")
    qv = np.asarray(q_err, dtype=float)[:3]
    w = np.asarray(omega_rel, dtype=float)
    th_star, thd_star, thdd_star = traj.evaluate(t)

    wdot_des = (-np.cross(w, a_ws) + a_phi_s
                - gains.k_omega * w - gains.k_q * qv)
    thdd_des = (thdd_star + gains.k_d * (thd_star - np.asarray(theta_dot, float))
                + gains.k_p * (th_star - np.asarray(theta, float)))

    tau_r = np.linalg.solve(rd.B, rd.M_b @ wdot_des + rset.M_bm @ thdd_des + rd.c_b)
    tau_m = rset.M_bm.T @ wdot_des + rset.M_m @ thdd_des + rset.c_m
    return tau_r, tau_m


def _largest_feasible(a: float, b: float, c: float):
    """Largest sigma satisfying a s^2 + b s + c <= 0 (None when unbounded)."""
    if a > 0.0:
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return 0.0, False
        return (-b + np.sqrt(disc)) / (2.0 * a), True
    if b < 0.0:
        return None, True
    if b > 0.0:
        return -c / b, True
    return (None, True) if c <= 0.0 else (0.0, False)


def phase_c_sigma(cd: CompoundDynamics, omega_b, limits: TorqueLimits,
                  eps_h: float = 1e-6, appendix_literal: bool = False):
    """Maximum feasible momentum-decay rate under both torque-norm bounds.

    Substituting the detumbling law into the wheel and end-effector norm
    constraints turns each into an upward parabola in sigma; the optimum is
    the smaller of the two largest roots and leaves at least one constraint
    active. Returns None once |M_t w_b| falls below eps_h (detumbling
    complete, controller shuts off).

    `appendix_literal` swaps the wheel-constraint constant term to use the
    end-effector limit, reproducing the printed coefficient for comparison.

    Raises InfeasibleError when the bias torques alone violate a bound at
    sigma = 0.
    """
    w = np.asarray(omega_b, dtype=float)
    hvec = cd.M_t @ w
    h = np.linalg.norm(hvec)
    if h <= eps_h:
        return None

    Binv = np.linalg.inv(cd.B)
    u = Binv @ (hvec / h)
    v = Binv @ cd.c_t
    lim1 = limits.tau_e_max if appendix_literal else limits.tau_r_max
    a1 = u @ u
    b1 = -2.0 * (u @ v)
    c1 = v @ v - lim1 ** 2
    Gu = cd.G @ u
    Gv = cd.G @ v + cd.c_g
    a2 = Gu @ Gu
    b2 = -2.0 * (Gu @ Gv)
    c2 = Gv @ Gv - limits.tau_e_max ** 2

    feas_tol = 1e-9 * (1.0 + limits.tau_r_max ** 2 + limits.tau_e_max ** 2)
    if c1 > feas_tol:
        raise InfeasibleError(
            f"wheel-torque constraint violated at sigma = 0 "
            f"(|B^-1 c_t| = {np.linalg.norm(v):.6e} > {lim1:.6e})")
    if c2 > feas_tol:
        raise InfeasibleError(
            f"end-effector torque constraint violated at sigma = 0 "
            f"(bias torque {np.linalg.norm(Gv):.6e} > {limits.tau_e_max:.6e})")
    s1, ok1 = _largest_feasible(a1, b1, c1)
    s2, ok2 = _largest_feasible(a2, b2, c2)
    if not (ok1 and ok2):
        raise InfeasibleError("torque constraints admit no decay rate")
    candidates = [s for s in (s1, s2) if s is not None]
    if not candidates:
        raise InfeasibleError("decay rate is unbounded; degenerate torque maps")
    return max(min(candidates), 0.0)


def phase_c_torque(cd: CompoundDynamics, omega_b, sigma: float) -> np.ndarray:
    """Detumbling wheel torque tau_r = B^-1 (c_t - (M_t w / |M_t w|) sigma);
    the closed loop shrinks |M_t w_b| at the constant rate sigma."""
    w = np.asarray(omega_b, dtype=float)
    hvec = cd.M_t @ w
    h = np.linalg.norm(hvec)
    if h <= 0.0:
        raise ValueError("momentum magnitude is zero; controller must be off")
    return np.linalg.solve(cd.B, cd.c_t - (hvec / h) * sigma)


def lyapunov_value(q_err, omega_rel, k_p: float) -> float:
    """Spin-matching Lyapunov function 2 k_p (1 - q_o) + 0.5 |w_rel|^2.

    The attitude term is weighted so that along the matched-spin closed loop
    dV/dt = -k_d |w_rel|^2 holds exactly (it equals k_p |q - q*|^2 for the
    canonical error quaternion).
    """
    qo = float(np.asarray(q_err, dtype=float)[3])
    w = np.asarray(omega_rel, dtype=float)
    return 2.0 * k_p * (1.0 - qo) + 0.5 * float(w @ w)
