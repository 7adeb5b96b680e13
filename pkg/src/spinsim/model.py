"""System description: servicer base + 6-R arm + reaction wheels, and the
spin-stabilized target. Covers configuration ingestion/validation, forward
kinematics, CoM bookkeeping, Jacobians, and the capture-pose inverse
kinematics.

Frames: the base frame sits at the base CoM; the servicer system CoM is the
"virtual ground" (inertially fixed under zero linear momentum), and the base
CoM offset r_b is expressed relative to it with base-frame axes. The target
frame sits at the target CoM, aligned with its principal axes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels, spatial
from .errors import ConfigError, KinematicsError

# Catalog inertia tensors are often mildly non-physical; accept principal
# moments violating the triangle inequality by up to this factor, reject worse.
TRIANGLE_SLACK = 1.25

N_JOINTS = 6


@dataclass(frozen=True)
class BodyParams:
    """Mass (kg), CoM position in the owning frame (m), inertia about the CoM (kg m^2)."""
    mass: float
    com: np.ndarray
    inertia: np.ndarray


@dataclass(frozen=True)
class LinkParams(BodyParams):
    """One arm link: joint axis (parent frame, unit) and joint-origin offset
    from the parent joint origin (parent frame, m)."""
    axis: np.ndarray
    offset: np.ndarray


@dataclass(frozen=True)
class ArmModel:
    links: tuple
    ee_offset: np.ndarray  # end-effector point in the last link frame (m)
    qd_max: float          # joint rate limit (rad/s)
    qdd_max: float         # joint acceleration limit (rad/s^2)


@dataclass(frozen=True)
class WheelModel:
    axes: np.ndarray       # (3,3), wheel spin axes as columns (base frame)
    inertia: np.ndarray    # (3,), axial rotor inertias (kg m^2)


@dataclass(frozen=True)
class TargetModel:
    mass: float
    inertia: np.ndarray        # diagonal, principal target axes (kg m^2)
    grasp_offset: np.ndarray   # grapple fixture in the target frame (m)
    grasp_attitude: np.ndarray # desired EE attitude at grasp, target frame (quat)

    @property
    def spin_asymmetry(self) -> float:
        """lam = 1 - Izz/Ixx of the axisymmetric target."""
        return 1.0 - self.inertia[2, 2] / self.inertia[0, 0]


@dataclass(frozen=True)
class Limits:
    qd_max: float
    qdd_max: float
    tau_r_max: float
    tau_e_max: float


@dataclass(frozen=True)
class InitialConditions:
    omega_s: np.ndarray   # target spin, target frame (rad/s)
    q_rel: np.ndarray     # initial target-relative-to-base attitude (quat)
    theta_i: np.ndarray   # parked joint angles (rad)
    rho: np.ndarray       # target CoM relative to servicer CoM, aligned/inertial (m)


@dataclass(frozen=True)
class GainSet:
    kp_att: float    # 1/s^2
    kd_att: float    # 1/s
    k_omega: float   # 1/s
    k_q: float       # 1/s^2
    kp_joint: float  # 1/s^2
    kd_joint: float  # 1/s
    eps_h: float     # detumble shutoff threshold (N m s)


@dataclass(frozen=True)
class SimParams:
    dt: float
    t_end: float
    telemetry_every: int
    omega_tol: float
    q_tol: float
    dwell: float
    settle: float


@dataclass(frozen=True)
class SystemModel:
    base: BodyParams
    arm: ArmModel
    wheels: WheelModel
    target: TargetModel
    limits: Limits
    initial: InitialConditions
    gains: GainSet
    sim: SimParams

    @property
    def arm_mass(self) -> float:
        return sum(l.mass for l in self.arm.links)

    @property
    def servicer_mass(self) -> float:
        return self.base.mass + self.arm_mass

    def packed_geometry(self):
        """Flat arrays consumed by the compiled kernels.

        Joint offsets are shifted so positions come out relative to the base
        CoM rather than the base frame origin.
        """
        ax = np.array([l.axis for l in self.arm.links])
        off = np.array([l.offset for l in self.arm.links])
        off[0] = off[0] - self.base.com
        cl = np.array([l.com for l in self.arm.links])
        Il = np.array([l.inertia for l in self.arm.links])
        ml = np.array([l.mass for l in self.arm.links])
        return (ax, off, cl, Il, ml, self.arm.ee_offset.copy(),
                self.base.mass, self.base.inertia.copy(),
                float(self.servicer_mass))


# ---------------------------------------------------------------------------
# configuration ingestion
# ---------------------------------------------------------------------------

def _get(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}{key}: missing field")
    return cfg[key]


def _vector(cfg, key, where, n=3):
    raw = _get(cfg, key, where)
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(f"{where}{key}: expected {n} numbers, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{where}{key}: non-finite entry")
    return arr


def _matrix(cfg, key, where, shape=(3, 3)):
    raw = _get(cfg, key, where)
    arr = np.asarray(raw, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"{where}{key}: expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(f"{where}{key}: non-finite entry")
    return arr


def _scalar(cfg, key, where, positive=True):
    raw = _get(cfg, key, where)
    try:
        val = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}{key}: not a number") from None
    if not np.isfinite(val):
        raise ConfigError(f"{where}{key}: non-finite")
    if positive and val <= 0.0:
        raise ConfigError(f"{where}{key}: must be > 0, got {val}")
    return val


def _check_inertia(I: np.ndarray, where: str) -> np.ndarray:
    if np.abs(I - I.T).max() > 1e-9 * max(1.0, np.abs(I).max()):
        raise ConfigError(f"{where}: inertia tensor is not symmetric")
    I = 0.5 * (I + I.T)
    eig = np.linalg.eigvalsh(I)
    if eig[0] <= 0.0:
        raise ConfigError(
            f"{where}: inertia tensor is not positive definite (eigenvalues {eig})")
    if eig[0] + eig[1] < eig[2] / TRIANGLE_SLACK:
        raise ConfigError(
            f"{where}: principal moments {eig} violate the triangle inequality")
    return I


def _unit(v: np.ndarray, where: str) -> np.ndarray:
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-6:
        raise ConfigError(f"{where}: expected a unit vector, norm is {n}")
    return v / n


def _body(cfg: dict, where: str) -> BodyParams:
    mass = _scalar(cfg, "mass_kg", where)
    com = _vector(cfg, "com_m", where)
    inertia = _check_inertia(_matrix(cfg, "inertia_kgm2", where), where + "inertia_kgm2")
    return BodyParams(mass=mass, com=com, inertia=inertia)


def parse_config(cfg: dict) -> SystemModel:
    """Validate and freeze a configuration dictionary into a SystemModel."""
    base = _body(_get(cfg, "base", ""), "base.")

    links_cfg = _get(cfg, "links", "")
    if not isinstance(links_cfg, list) or len(links_cfg) != N_JOINTS:
        raise ConfigError(f"links: expected exactly {N_JOINTS} entries")
    links = []
    for i, lc in enumerate(links_cfg):
        where = f"links[{i}]."
        body = _body(lc, where)
        axis = _unit(_vector(lc, "axis", where), where + "axis")
        offset = _vector(lc, "offset_m", where)
        links.append(LinkParams(mass=body.mass, com=body.com,
                                inertia=body.inertia, axis=axis, offset=offset))

    ee_cfg = _get(cfg, "end_effector", "")
    ee_offset = _vector(ee_cfg, "offset_m", "end_effector.")

    wheels_cfg = _get(cfg, "wheels", "")
    axes = _matrix(wheels_cfg, "axes", "wheels.")
    for j in range(3):
        axes[:, j] = _unit(axes[:, j], f"wheels.axes column {j}")
    if abs(np.linalg.det(axes)) < 1e-6:
        raise ConfigError("wheels.axes: spin axes are coplanar (rank deficient)")
    iw = _get(wheels_cfg, "inertia_kgm2", "wheels.")
    iw_arr = np.atleast_1d(np.asarray(iw, dtype=float))
    if iw_arr.shape == (1,):
        iw_arr = np.repeat(iw_arr, 3)
    if iw_arr.shape != (3,) or (iw_arr <= 0.0).any():
        raise ConfigError("wheels.inertia_kgm2: expected positive scalar or 3 values")
    wheels = WheelModel(axes=axes, inertia=iw_arr)

    tgt_cfg = _get(cfg, "target", "")
    t_mass = _scalar(tgt_cfg, "mass_kg", "target.")
    t_inertia = _check_inertia(_matrix(tgt_cfg, "inertia_kgm2", "target."),
                               "target.inertia_kgm2")
    offdiag = t_inertia - np.diag(np.diag(t_inertia))
    if np.abs(offdiag).max() > 1e-12 * np.abs(t_inertia).max():
        raise ConfigError("target.inertia_kgm2: must be diagonal (principal target axes)")
    if abs(t_inertia[0, 0] - t_inertia[1, 1]) > 1e-12 * t_inertia[0, 0]:
        raise ConfigError("target.inertia_kgm2: target must be axisymmetric (Ixx == Iyy)")
    grasp_offset = _vector(tgt_cfg, "grasp_offset_m", "target.")
    if "grasp_attitude" in tgt_cfg:
        grasp_att = _vector(tgt_cfg, "grasp_attitude", "target.", n=4)
        nq = np.linalg.norm(grasp_att)
        if abs(nq - 1.0) > 1e-6:
            raise ConfigError(f"target.grasp_attitude: not unit norm ({nq})")
        grasp_att = grasp_att / nq
    else:
        grasp_att = spatial.QUAT_IDENTITY.copy()
    target = TargetModel(mass=t_mass, inertia=t_inertia,
                         grasp_offset=grasp_offset, grasp_attitude=grasp_att)

    lim_cfg = _get(cfg, "limits", "")
    limits = Limits(
        qd_max=_scalar(lim_cfg, "qd_max_rad_s", "limits."),
        qdd_max=_scalar(lim_cfg, "qdd_max_rad_s2", "limits."),
        tau_r_max=_scalar(lim_cfg, "tau_r_max_Nm", "limits."),
        tau_e_max=_scalar(lim_cfg, "tau_e_max_Nm", "limits."),
    )
    arm = ArmModel(links=tuple(links), ee_offset=ee_offset,
                   qd_max=limits.qd_max, qdd_max=limits.qdd_max)

    init_cfg = _get(cfg, "initial", "")
    omega_s = _vector(init_cfg, "omega_s_rad_s", "initial.")
    q_rel = _vector(init_cfg, "q_rel", "initial.", n=4)
    nq = np.linalg.norm(q_rel)
    if abs(nq - 1.0) > 1e-6:
        raise ConfigError(f"initial.q_rel: not unit norm ({nq})")
    q_rel = q_rel / nq
    theta_i = _vector(init_cfg, "theta_i_rad", "initial.", n=N_JOINTS)
    rho = _vector(init_cfg, "rho_m", "initial.")
    ws_n = np.linalg.norm(omega_s)
    if ws_n > 0.0:
        sin_mis = np.linalg.norm(np.cross(rho, omega_s)) / (np.linalg.norm(rho) * ws_n)
        if sin_mis > 1e-9:
            raise ConfigError(
                "initial.rho_m: CoM displacement must be parallel to the target "
                f"spin axis (misalignment sine {sin_mis:.3e})")
    initial = InitialConditions(omega_s=omega_s, q_rel=q_rel, theta_i=theta_i, rho=rho)

    g_cfg = _get(cfg, "gains", "")
    bw = _scalar(g_cfg, "bandwidth_rad_s", "gains.")
    gains = GainSet(
        kp_att=float(g_cfg.get("kp_att", bw * bw)),
        kd_att=float(g_cfg.get("kd_att", 2.0 * bw)),
        k_omega=float(g_cfg.get("k_omega", 2.0 * bw)),
        k_q=float(g_cfg.get("k_q", bw * bw)),
        kp_joint=float(g_cfg.get("kp_joint", bw * bw)),
        kd_joint=float(g_cfg.get("kd_joint", 2.0 * bw)),
        eps_h=float(g_cfg.get("eps_h_Nms", 1e-6)),
    )
    for name in ("kp_att", "kd_att", "k_omega", "k_q", "kp_joint", "kd_joint", "eps_h"):
        if getattr(gains, name) <= 0.0:
            raise ConfigError(f"gains.{name}: must be > 0")

    s_cfg = _get(cfg, "sim", "")
    sim = SimParams(
        dt=_scalar(s_cfg, "dt_s", "sim."),
        t_end=_scalar(s_cfg, "t_end_s", "sim."),
        telemetry_every=int(s_cfg.get("telemetry_every", 100)),
        omega_tol=float(s_cfg.get("omega_tol_rad_s", 1e-4)),
        q_tol=float(s_cfg.get("q_tol", 1e-3)),
        dwell=float(s_cfg.get("dwell_s", 5.0)),
        settle=float(s_cfg.get("settle_s", 30.0)),
    )
    if sim.telemetry_every < 1:
        raise ConfigError("sim.telemetry_every: must be >= 1")

    return SystemModel(base=base, arm=arm, wheels=wheels, target=target,
                       limits=limits, initial=initial, gains=gains, sim=sim)


def load_config(path) -> SystemModel:
    """Load and validate a JSON configuration file."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return parse_config(cfg)


def reference_config_path() -> Path:
    """Path of the packaged reference mission configuration."""
    return Path(__file__).parent / "data" / "reference.json"


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FKResult:
    r: np.ndarray            # end-effector position in the base frame (m)
    eta: np.ndarray          # end-effector attitude quaternion (base frame)
    link_coms: np.ndarray    # (6,3) link CoM positions, base frame
    joint_origins: np.ndarray
    joint_axes: np.ndarray   # (6,3) axes in base components
    link_rotations: np.ndarray
    ee_rotation: np.ndarray


def forward_kinematics(model: SystemModel, theta) -> FKResult:
    """End-effector pose and per-link CoM positions in the base frame."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_JOINTS,) or not np.isfinite(theta).all():
        raise ValueError("theta must be 6 finite joint angles")
    ax, off, cl, Il, ml, ee, mb, Ib, Mtot = model.packed_geometry()
    R, o, p, z, x_ee, R_ee = _kernels.arm_kinematics(ax, off, cl, ee, theta)
    return FKResult(r=x_ee, eta=spatial.rotmat_to_quat(R_ee), link_coms=p,
                    joint_origins=o, joint_axes=z, link_rotations=R,
                    ee_rotation=R_ee)


def base_com_offset(model: SystemModel, theta) -> np.ndarray:
    """Base CoM relative to the servicer system CoM: -(1/M) sum_i m_i p_i."""
    fk = forward_kinematics(model, theta)
    ml = np.array([l.mass for l in model.arm.links])
    return -(ml[:, None] * fk.link_coms).sum(axis=0) / model.servicer_mass


def com_jacobian(model: SystemModel, theta) -> np.ndarray:
    """d r_b / d theta (3x6): maps joint rates to base-CoM drift."""
    theta = np.asarray(theta, dtype=float)
    ax, off, cl, Il, ml, ee, mb, Ib, Mtot = model.packed_geometry()
    Jp, Jr, Jp_ee, Jr_ee, Jrb, p, x_ee = _kernels.arm_jacobians(
        ax, off, cl, ee, ml, Mtot, theta)
    return Jrb


def ee_jacobians(model: SystemModel, theta):
    """(Jp_ee, Jr_ee): end-effector translational/rotational Jacobians (base frame)."""
    theta = np.asarray(theta, dtype=float)
    ax, off, cl, Il, ml, ee, mb, Ib, Mtot = model.packed_geometry()
    Jp, Jr, Jp_ee, Jr_ee, Jrb, p, x_ee = _kernels.arm_jacobians(
        ax, off, cl, ee, ml, Mtot, theta)
    return Jp_ee, Jr_ee


def solve_final_joints(model: SystemModel, rho, varrho, eta_f, theta0=None,
                       tol=1e-10, damping=1e-3, max_iter=500):
    """Joint angles placing the end-effector on the grapple fixture.

    Solves the coupled closure r(theta) + r_b(theta) = rho + varrho together
    with the end-effector attitude eta_f, all under aligned frames. The base
    CoM offset appears on both sides through theta, so the iteration runs on
    the stacked position/attitude residual with damped least squares.

    Raises KinematicsError when the residual stalls above tolerance
    (unreachable pose) or blows past the workspace.
    """
    rho = np.asarray(rho, dtype=float)
    varrho = np.asarray(varrho, dtype=float)
    goal = rho + varrho
    R_goal = spatial.quat_to_rotmat(spatial.quat_normalize(eta_f))

    ax, off, cl, Il, ml, ee, mb, Ib, Mtot = model.packed_geometry()
    theta = np.array(model.initial.theta_i if theta0 is None else theta0,
                     dtype=float)

    best = np.inf
    stall = 0
    for it in range(max_iter):
        Jp, Jr, Jp_ee, Jr_ee, Jrb, p, x_ee = _kernels.arm_jacobians(
            ax, off, cl, ee, ml, Mtot, theta)
        r_b = -(ml[:, None] * p).sum(axis=0) / Mtot
        R, o, pk, z, x_e, R_ee = _kernels.arm_kinematics(ax, off, cl, ee, theta)
        e_pos = goal - (x_e + r_b)
        e_rot = spatial.rotation_vector(spatial.rotmat_to_quat(R_goal @ R_ee.T))
        res = np.concatenate([e_pos, e_rot])
        nres = np.linalg.norm(res)
        if nres < tol:
            return theta
        if nres < best - 1e-14:
            best = nres
            stall = 0
        else:
            stall += 1
        if stall > 25:
            J = np.vstack([Jp_ee + Jrb, Jr_ee])
            cond = np.linalg.cond(J)
            raise KinematicsError(
                f"pose unreachable: residual stalled at {nres:.3e} "
                f"(position {np.linalg.norm(e_pos):.3e} m) after {it} iterations; "
                f"task Jacobian condition number {cond:.3e}")
        J = np.vstack([Jp_ee + Jrb, Jr_ee])
        A = J.T @ J + (damping ** 2) * np.eye(N_JOINTS)
        theta = theta + np.linalg.solve(A, J.T @ res)

    raise KinematicsError(
        f"inverse kinematics did not converge in {max_iter} iterations "
        f"(residual {best:.3e})")
