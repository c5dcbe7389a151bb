"""Floating-base quadruped model: kinematics, Jacobians and joint-space dynamics.

The robot is a 6-DoF floating base plus 4 legs with 3 revolute joints each
(abduction about x, hip and knee flexion about y; the two hip axes intersect).
Generalized position q = (base position, base quaternion wxyz, 12 joint angles).
Generalized velocity u in R^18 = (base linear velocity, base angular velocity,
joint rates) with the base twist expressed in the *base* frame.

Every quantity with a frame is world-frame unless stated otherwise.  The foot
frame shares the shank orientation, so its z axis lies along the shank.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .maths import cross3, quat_exp, quat_mul, quat_normalize, quat_to_rot, rot_x, rot_y, skew

N_LEGS = 4
N_JOINTS = 12
NV = 18  # generalized velocity dimension
LEG_NAMES = ("LF", "RF", "LH", "RH")


class ModelError(ValueError):
    """Invalid robot description or state."""


@dataclass(frozen=True)
class RobotModel:
    """Inertial and geometric parameters of the quadruped."""

    base_mass: float
    base_inertia: np.ndarray            # (3,) principal, base frame
    thigh_mass: float
    thigh_inertia: np.ndarray           # (3,) principal, link frame
    shank_mass: float
    shank_inertia: np.ndarray
    thigh_length: float
    shank_length: float
    hip_offsets: np.ndarray             # (4, 3) base frame, order LF RF LH RH
    tau_min: np.ndarray                 # (12,)
    tau_max: np.ndarray                 # (12,)
    friction_coeff: float
    gravity: np.ndarray                 # (3,) world frame

    @property
    def total_mass(self) -> float:
        return self.base_mass + N_LEGS * (self.thigh_mass + self.shank_mass)

    @property
    def leg_length(self) -> float:
        return self.thigh_length + self.shank_length

    def config_hash(self) -> str:
        payload = json.dumps(
            {
                "base_mass": self.base_mass,
                "base_inertia": self.base_inertia.tolist(),
                "thigh_mass": self.thigh_mass,
                "thigh_inertia": self.thigh_inertia.tolist(),
                "shank_mass": self.shank_mass,
                "shank_inertia": self.shank_inertia.tolist(),
                "thigh_length": self.thigh_length,
                "shank_length": self.shank_length,
                "hip_offsets": self.hip_offsets.tolist(),
                "tau_min": self.tau_min.tolist(),
                "tau_max": self.tau_max.tolist(),
                "friction_coeff": self.friction_coeff,
                "gravity": self.gravity.tolist(),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class RobotState:
    """Generalized position and velocity."""

    base_pos: np.ndarray                # (3,)
    base_quat: np.ndarray               # (4,) wxyz, unit
    q_joints: np.ndarray                # (12,)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(NV))

    def __post_init__(self) -> None:
        self.base_pos = np.asarray(self.base_pos, dtype=float).reshape(3)
        self.base_quat = np.asarray(self.base_quat, dtype=float).reshape(4)
        self.q_joints = np.asarray(self.q_joints, dtype=float).reshape(N_JOINTS)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(NV)
        if abs(np.linalg.norm(self.base_quat) - 1.0) > 1e-9:
            raise ModelError("base quaternion must be unit norm (within 1e-9)")

    def copy(self) -> "RobotState":
        return RobotState(
            self.base_pos.copy(),
            self.base_quat.copy(),
            self.q_joints.copy(),
            self.velocity.copy(),
        )

    @property
    def base_rot(self) -> np.ndarray:
        return quat_to_rot(self.base_quat)

    def flat_q(self) -> np.ndarray:
        return np.concatenate([self.base_pos, self.base_quat, self.q_joints])


def integrate_state(state: RobotState, u: np.ndarray, dt: float) -> RobotState:
    """Advance the pose by u over dt (base twist in the base frame)."""
    u = np.asarray(u, dtype=float).reshape(NV)
    R = state.base_rot
    pos = state.base_pos + dt * (R @ u[0:3])
    quat = quat_normalize(quat_mul(state.base_quat, quat_exp(dt * u[3:6])))
    qj = state.q_joints + dt * u[6:18]
    return RobotState(pos, quat, qj, u.copy())


DEFAULT_CONFIG = {
    "base_mass": 20.0,
    "base_inertia": [0.1875, 0.6375, 0.75],
    "thigh_mass": 2.0,
    "thigh_inertia": [0.0105, 0.0105, 0.0004],
    "shank_mass": 1.0,
    "shank_inertia": [0.0053, 0.0053, 0.0002],
    "thigh_length": 0.25,
    "shank_length": 0.25,
    "hip_offsets": [
        [0.3, 0.2, 0.0],
        [0.3, -0.2, 0.0],
        [-0.3, 0.2, 0.0],
        [-0.3, -0.2, 0.0],
    ],
    "tau_min": [-40.0] * 12,
    "tau_max": [40.0] * 12,
    "friction_coeff": 0.6,
    "gravity": [0.0, 0.0, -9.81],
}


def load_model(description: str | dict | None = None) -> RobotModel:
    """Build a validated RobotModel from a YAML/dict description.

    Omitted fields fall back to the default desk-scale quadruped.  Violated
    invariants raise ModelError naming the offending field.
    """
    import yaml

    if description is None:
        data = {}
    elif isinstance(description, dict):
        data = dict(description)
    else:
        loaded = yaml.safe_load(description)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ModelError("robot description must be a mapping")
        data = loaded

    unknown = set(data) - set(DEFAULT_CONFIG) - {"legs"}
    if unknown:
        raise ModelError(f"unknown robot description fields: {sorted(unknown)}")

    if "legs" in data:
        if int(data["legs"]) != N_LEGS:
            raise ModelError("exactly 4 legs are required")
        data.pop("legs")

    merged = {**DEFAULT_CONFIG, **data}

    def arr(name, shape):
        a = np.asarray(merged[name], dtype=float)
        if a.shape != shape:
            raise ModelError(f"{name} must have shape {shape}, got {a.shape}")
        return a

    hip_offsets = arr("hip_offsets", (4, 3))
    tau_min = arr("tau_min", (12,))
    tau_max = arr("tau_max", (12,))
    for name in ("base_mass", "thigh_mass", "shank_mass"):
        if float(merged[name]) <= 0:
            raise ModelError(f"{name} must be > 0")
    for name in ("base_inertia", "thigh_inertia", "shank_inertia"):
        inertia = arr(name, (3,))
        if np.any(inertia <= 0):
            raise ModelError(f"{name} must be positive definite")
    for name in ("thigh_length", "shank_length"):
        if float(merged[name]) <= 0:
            raise ModelError(f"{name} must be > 0")
    bad = np.nonzero(tau_min >= tau_max)[0]
    if bad.size:
        raise ModelError(f"tau_min must be < tau_max (violated at joint {int(bad[0])})")
    if float(merged["friction_coeff"]) <= 0:
        raise ModelError("friction_coeff must be > 0")

    return RobotModel(
        base_mass=float(merged["base_mass"]),
        base_inertia=arr("base_inertia", (3,)),
        thigh_mass=float(merged["thigh_mass"]),
        thigh_inertia=arr("thigh_inertia", (3,)),
        shank_mass=float(merged["shank_mass"]),
        shank_inertia=arr("shank_inertia", (3,)),
        thigh_length=float(merged["thigh_length"]),
        shank_length=float(merged["shank_length"]),
        hip_offsets=hip_offsets,
        tau_min=tau_min,
        tau_max=tau_max,
        friction_coeff=float(merged["friction_coeff"]),
        gravity=arr("gravity", (3,)),
    )


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

@dataclass
class KinTree:
    """World-frame kinematics snapshot for one state."""

    base_rot: np.ndarray                # (3,3)
    base_pos: np.ndarray                # (3,)
    joint_pos: np.ndarray               # (4,3,3) world joint points (hip, hip, knee)
    joint_axis: np.ndarray              # (4,3,3) world joint axes
    link_rot: np.ndarray                # (4,2,3,3) thigh/shank orientations
    foot_pos: np.ndarray                # (4,3)
    foot_rot: np.ndarray                # (4,3,3) z axis along the shank
    com_pos: np.ndarray                 # (9,3) base + per-leg thigh/shank


def evaluate_kinematics(model: RobotModel, state: RobotState) -> KinTree:
    R_b = state.base_rot
    p_b = state.base_pos
    qj = state.q_joints

    joint_pos = np.zeros((4, 3, 3))
    joint_axis = np.zeros((4, 3, 3))
    link_rot = np.zeros((4, 2, 3, 3))
    foot_pos = np.zeros((4, 3))
    foot_rot = np.zeros((4, 3, 3))
    com_pos = np.zeros((9, 3))
    com_pos[0] = p_b  # base COM at the base origin

    thigh_vec = np.array([0.0, 0.0, -model.thigh_length])
    shank_vec = np.array([0.0, 0.0, -model.shank_length])

    for leg in range(N_LEGS):
        q1, q2, q3 = qj[3 * leg: 3 * leg + 3]
        p_hip = p_b + R_b @ model.hip_offsets[leg]
        R1 = R_b @ rot_x(q1)
        R2 = R1 @ rot_y(q2)          # thigh frame
        p_knee = p_hip + R2 @ thigh_vec
        R3 = R2 @ rot_y(q3)          # shank frame
        p_foot = p_knee + R3 @ shank_vec

        joint_pos[leg] = [p_hip, p_hip, p_knee]
        joint_axis[leg, 0] = R_b[:, 0]
        joint_axis[leg, 1] = R1[:, 1]
        joint_axis[leg, 2] = R2[:, 1]
        link_rot[leg, 0] = R2
        link_rot[leg, 1] = R3
        foot_pos[leg] = p_foot
        foot_rot[leg] = R3
        com_pos[1 + 2 * leg] = p_hip + R2 @ (0.5 * thigh_vec)
        com_pos[2 + 2 * leg] = p_knee + R3 @ (0.5 * shank_vec)

    return KinTree(R_b, p_b, joint_pos, joint_axis, link_rot, foot_pos, foot_rot, com_pos)


def forward_kinematics(model: RobotModel, state: RobotState) -> dict:
    """World poses (rotation, position) of the base, feet and leg links."""
    kin = evaluate_kinematics(model, state)
    frames = {"base": (kin.base_rot, kin.base_pos)}
    for leg in range(N_LEGS):
        frames[f"foot{leg}"] = (kin.foot_rot[leg], kin.foot_pos[leg])
        frames[f"thigh{leg}"] = (kin.link_rot[leg, 0], kin.joint_pos[leg, 0])
        frames[f"shank{leg}"] = (kin.link_rot[leg, 1], kin.joint_pos[leg, 2])
    return frames


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def _point_jacobian(kin: KinTree, leg: int | None, point: np.ndarray,
                    n_joints_in_chain: int = 3) -> np.ndarray:
    """World-frame linear velocity Jacobian of a point rigidly attached to the
    chain of `leg` (or to the base when leg is None)."""
    J = np.zeros((3, NV))
    J[:, 0:3] = kin.base_rot
    J[:, 3:6] = -skew(point - kin.base_pos) @ kin.base_rot
    if leg is not None:
        for j in range(n_joints_in_chain):
            col = 6 + 3 * leg + j
            J[:, col] = cross3(kin.joint_axis[leg, j], point - kin.joint_pos[leg, j])
    return J


def _angular_jacobian(kin: KinTree, leg: int | None,
                      n_joints_in_chain: int = 3) -> np.ndarray:
    J = np.zeros((3, NV))
    J[:, 3:6] = kin.base_rot
    if leg is not None:
        for j in range(n_joints_in_chain):
            J[:, 6 + 3 * leg + j] = kin.joint_axis[leg, j]
    return J


def frame_jacobian(model: RobotModel, state: RobotState, frame: str,
                   task_rows: int = 6, kin: KinTree | None = None) -> np.ndarray:
    """World-frame Jacobian mapping u to the task velocity of `frame`.

    task_rows selects the task: 3 = position, 6 = position + world angular
    velocity, 5 = position + the x/y components of the angular velocity
    expressed in the frame itself (drops the frame-yaw row, which for a foot
    spins about the shank axis).
    """
    if kin is None:
        kin = evaluate_kinematics(model, state)
    if task_rows not in (3, 5, 6):
        raise ModelError(f"task_rows must be 3, 5 or 6, got {task_rows}")

    if frame == "base":
        leg, point, rot = None, kin.base_pos, kin.base_rot
    elif frame.startswith("foot"):
        leg = int(frame[4:])
        if not 0 <= leg < N_LEGS:
            raise ModelError(f"unknown frame {frame!r}")
        point, rot = kin.foot_pos[leg], kin.foot_rot[leg]
    else:
        raise ModelError(f"unknown frame {frame!r}")

    J_lin = _point_jacobian(kin, leg, point)
    if task_rows == 3:
        return J_lin
    J_ang = _angular_jacobian(kin, leg)
    if task_rows == 6:
        return np.vstack([J_lin, J_ang])
    # 5 rows: angular part in the task frame, yaw row dropped
    return np.vstack([J_lin, (rot.T @ J_ang)[0:2, :]])


def contact_jacobian(model: RobotModel, state: RobotState, stance_legs,
                     kin: KinTree | None = None) -> np.ndarray:
    """Stacked 3-row position Jacobians of the stance feet (3k x 18)."""
    if kin is None:
        kin = evaluate_kinematics(model, state)
    rows = [_point_jacobian(kin, leg, kin.foot_pos[leg]) for leg in stance_legs]
    if not rows:
        return np.zeros((0, NV))
    return np.vstack(rows)


def jacobian_rate(model: RobotModel, state: RobotState, jac_fn, eps: float = 1e-7) -> np.ndarray:
    """dJ/dt by central differences along the current velocity."""
    u = state.velocity
    fwd = jac_fn(integrate_state(state, u, eps))
    bwd = jac_fn(integrate_state(state, u, -eps))
    return (fwd - bwd) / (2.0 * eps)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _body_params(model: RobotModel):
    """(mass, local inertia diag) for bodies ordered base, thigh0, shank0, ..."""
    out = [(model.base_mass, model.base_inertia)]
    for _ in range(N_LEGS):
        out.append((model.thigh_mass, model.thigh_inertia))
        out.append((model.shank_mass, model.shank_inertia))
    return out


def _body_frames(kin: KinTree):
    """World rotation of each body, aligned with _body_params order."""
    rots = [kin.base_rot]
    for leg in range(N_LEGS):
        rots.append(kin.link_rot[leg, 0])
        rots.append(kin.link_rot[leg, 1])
    return rots


def mass_matrix(model: RobotModel, state: RobotState, kin: KinTree | None = None) -> np.ndarray:
    """Joint-space inertia matrix assembled from per-body COM Jacobians."""
    if kin is None:
        kin = evaluate_kinematics(model, state)
    M = np.zeros((NV, NV))
    rots = _body_frames(kin)
    params = _body_params(model)
    body = 0
    for (m, inertia), R in zip(params, rots):
        if body == 0:
            leg, chain = None, 0
        else:
            leg = (body - 1) // 2
            chain = 2 + (body - 1) % 2  # thigh sees 2 joints, shank sees 3
        Jv = _point_jacobian(kin, leg, kin.com_pos[body], chain)
        Jw = _angular_jacobian(kin, leg, chain)
        I_w = R @ np.diag(inertia) @ R.T
        M += m * (Jv.T @ Jv) + Jw.T @ I_w @ Jw
        body += 1
    return 0.5 * (M + M.T)


def inverse_dynamics(model: RobotModel, state: RobotState, udot: np.ndarray,
                     kin: KinTree | None = None) -> np.ndarray:
    """Generalized force M(q) udot + h(q, u) via recursive Newton-Euler.

    udot holds the derivatives of the base-frame twist components and the
    joint accelerations; gravity is included (the returned vector is the
    applied generalized force required to realize udot with no contacts).
    """
    if kin is None:
        kin = evaluate_kinematics(model, state)
    udot = np.asarray(udot, dtype=float).reshape(NV)
    u = state.velocity
    g = model.gravity
    R_b, p_b = kin.base_rot, kin.base_pos

    w_b = R_b @ u[3:6]                    # base angular velocity, world
    al_b = R_b @ udot[3:6]                # base angular acceleration, world
    v_b = R_b @ u[0:3]
    a_b = R_b @ udot[0:3] + cross3(w_b, v_b)

    tau = np.zeros(NV)
    F_base_total = np.zeros(3)
    N_base_total = np.zeros(3)

    # base body
    m0, I0 = model.base_mass, np.diag(model.base_inertia)
    I0w = R_b @ I0 @ R_b.T
    f0 = m0 * (a_b - g)                   # base COM at base origin
    n0 = I0w @ al_b + cross3(w_b, I0w @ w_b)
    F_base_total += f0
    N_base_total += n0

    thigh_vec = np.array([0.0, 0.0, -model.thigh_length])
    shank_vec = np.array([0.0, 0.0, -model.shank_length])

    for leg in range(N_LEGS):
        qd = u[6 + 3 * leg: 9 + 3 * leg]
        qdd = udot[6 + 3 * leg: 9 + 3 * leg]
        p_hip = kin.joint_pos[leg, 0]
        r_hip = p_hip - p_b
        v_hip = v_b + cross3(w_b, r_hip)
        a_hip = a_b + cross3(al_b, r_hip) + cross3(w_b, cross3(w_b, r_hip))

        a1, a2, a3 = kin.joint_axis[leg]
        w1 = w_b + a1 * qd[0]
        al1 = al_b + a1 * qdd[0] + cross3(w_b, a1 * qd[0])
        w2 = w1 + a2 * qd[1]
        al2 = al1 + a2 * qdd[1] + cross3(w1, a2 * qd[1])

        R_th = kin.link_rot[leg, 0]
        c_th = R_th @ (0.5 * thigh_vec)
        a_com_th = a_hip + cross3(al2, c_th) + cross3(w2, cross3(w2, c_th))
        I_th = R_th @ np.diag(model.thigh_inertia) @ R_th.T
        f_th = model.thigh_mass * (a_com_th - g)
        n_th = I_th @ al2 + cross3(w2, I_th @ w2)

        r_knee = R_th @ thigh_vec
        p_knee = kin.joint_pos[leg, 2]
        a_knee = a_hip + cross3(al2, r_knee) + cross3(w2, cross3(w2, r_knee))

        w3 = w2 + a3 * qd[2]
        al3 = al2 + a3 * qdd[2] + cross3(w2, a3 * qd[2])
        R_sh = kin.link_rot[leg, 1]
        c_sh = R_sh @ (0.5 * shank_vec)
        a_com_sh = a_knee + cross3(al3, c_sh) + cross3(w3, cross3(w3, c_sh))
        I_sh = R_sh @ np.diag(model.shank_inertia) @ R_sh.T
        f_sh = model.shank_mass * (a_com_sh - g)
        n_sh = I_sh @ al3 + cross3(w3, I_sh @ w3)

        # backward pass: shank about the knee, then thigh+shank about the hip
        N_knee = n_sh + cross3(c_sh, f_sh)
        tau[6 + 3 * leg + 2] = a3 @ N_knee

        F_leg = f_th + f_sh
        N_hip = (n_th + cross3(c_th, f_th)
                 + N_knee + cross3(r_knee, f_sh))
        tau[6 + 3 * leg + 1] = a2 @ N_hip
        tau[6 + 3 * leg + 0] = a1 @ N_hip

        F_base_total += F_leg
        N_base_total += N_hip + cross3(r_hip, F_leg)

    tau[0:3] = R_b.T @ F_base_total
    tau[3:6] = R_b.T @ N_base_total
    return tau


def bias_forces(model: RobotModel, state: RobotState, kin: KinTree | None = None) -> np.ndarray:
    """Coriolis, centrifugal and gravity generalized forces h(q, u)."""
    return inverse_dynamics(model, state, np.zeros(NV), kin)


def gravity_forces(model: RobotModel, state: RobotState, kin: KinTree | None = None) -> np.ndarray:
    at_rest = RobotState(state.base_pos, state.base_quat, state.q_joints, np.zeros(NV))
    return inverse_dynamics(model, at_rest, np.zeros(NV), kin)


def com_position(model: RobotModel, state: RobotState, kin: KinTree | None = None) -> np.ndarray:
    """Whole-body center of mass, world frame."""
    if kin is None:
        kin = evaluate_kinematics(model, state)
    masses = np.array([m for m, _ in _body_params(model)])
    return masses @ kin.com_pos / model.total_mass


def kinetic_energy(model: RobotModel, state: RobotState) -> float:
    M = mass_matrix(model, state)
    return 0.5 * float(state.velocity @ M @ state.velocity)


def potential_energy(model: RobotModel, state: RobotState) -> float:
    kin = evaluate_kinematics(model, state)
    masses = np.array([m for m, _ in _body_params(model)])
    return -float(np.sum(masses[:, None] * kin.com_pos @ model.gravity))


def total_energy(model: RobotModel, state: RobotState) -> float:
    return kinetic_energy(model, state) + potential_energy(model, state)


# ---------------------------------------------------------------------------
# aggregated dynamics terms
# ---------------------------------------------------------------------------

def selection_matrix() -> np.ndarray:
    B = np.zeros((NV, NV))
    B[6:, 6:] = np.eye(N_JOINTS)
    return B


@dataclass
class DynamicsTerms:
    """One consistent snapshot of everything the controllers consume."""

    M: np.ndarray                      # (18,18)
    h: np.ndarray                      # (18,)
    B: np.ndarray                      # (18,18)
    J_c: np.ndarray                    # (3k,18)
    Jdot_c: np.ndarray
    J_s: np.ndarray                    # (m,18) manipulating-foot task
    Jdot_s: np.ndarray
    J_b: np.ndarray                    # (6,18)
    Jdot_b: np.ndarray
    leg_joint_blocks: np.ndarray       # (4,3,3) J_{i,i}
    leg_base_blocks: np.ndarray        # (4,3,6) J_{i,b}
    stance_legs: tuple
    task_leg: int
    task_rows: int
    kin: KinTree


def compute_dynamics_terms(model: RobotModel, state: RobotState,
                           stance_legs=(1, 2, 3), task_leg: int = 0,
                           task_rows: int = 5) -> DynamicsTerms:
    kin = evaluate_kinematics(model, state)
    stance_legs = tuple(stance_legs)
    foot_frame = f"foot{task_leg}"

    J_c = contact_jacobian(model, state, stance_legs, kin)
    J_s = frame_jacobian(model, state, foot_frame, task_rows, kin)
    J_b = frame_jacobian(model, state, "base", 6, kin)

    # one shared finite-difference pass for all Jacobian rates
    eps = 1e-7
    s_p = integrate_state(state, state.velocity, eps)
    s_m = integrate_state(state, state.velocity, -eps)
    kin_p = evaluate_kinematics(model, s_p)
    kin_m = evaluate_kinematics(model, s_m)
    inv2e = 1.0 / (2.0 * eps)
    Jdot_c = (contact_jacobian(model, s_p, stance_legs, kin_p)
              - contact_jacobian(model, s_m, stance_legs, kin_m)) * inv2e
    Jdot_s = (frame_jacobian(model, s_p, foot_frame, task_rows, kin_p)
              - frame_jacobian(model, s_m, foot_frame, task_rows, kin_m)) * inv2e
    Jdot_b = (frame_jacobian(model, s_p, "base", 6, kin_p)
              - frame_jacobian(model, s_m, "base", 6, kin_m)) * inv2e

    leg_joint_blocks = np.zeros((4, 3, 3))
    leg_base_blocks = np.zeros((4, 3, 6))
    for leg in range(N_LEGS):
        J_foot = _point_jacobian(kin, leg, kin.foot_pos[leg])
        leg_joint_blocks[leg] = J_foot[:, 6 + 3 * leg: 9 + 3 * leg]
        leg_base_blocks[leg] = J_foot[:, 0:6]

    return DynamicsTerms(
        M=mass_matrix(model, state, kin),
        h=bias_forces(model, state, kin),
        B=selection_matrix(),
        J_c=J_c,
        Jdot_c=Jdot_c,
        J_s=J_s,
        Jdot_s=Jdot_s,
        J_b=J_b,
        Jdot_b=Jdot_b,
        leg_joint_blocks=leg_joint_blocks,
        leg_base_blocks=leg_base_blocks,
        stance_legs=stance_legs,
        task_leg=task_leg,
        task_rows=task_rows,
        kin=kin,
    )


@dataclass
class InertialSplit:
    """d = M qdd + h partitioned into base and per-leg joint rows."""

    d_base: np.ndarray                 # (6,)
    d_legs: np.ndarray                 # (4,3)

    def reassemble(self) -> np.ndarray:
        return np.concatenate([self.d_base, self.d_legs.reshape(-1)])


def inertial_split(model: RobotModel, state: RobotState, qdd: np.ndarray,
                   kin: KinTree | None = None) -> InertialSplit:
    qdd = np.asarray(qdd, dtype=float).reshape(NV)
    d = inverse_dynamics(model, state, qdd, kin)
    return InertialSplit(d_base=d[0:6], d_legs=d[6:].reshape(4, 3))


# ---------------------------------------------------------------------------
# leg inverse kinematics (used by grid precompute and scenario setup)
# ---------------------------------------------------------------------------

def leg_inverse_kinematics(model: RobotModel, leg: int, foot_base_frame: np.ndarray,
                           knee_sign: float = -1.0) -> np.ndarray:
    """Joint angles placing foot `leg` at a base-frame position.

    knee_sign picks the knee flexion branch (negative matches the default
    standing pose).  Raises ModelError when the point is out of reach.
    """
    v = np.asarray(foot_base_frame, dtype=float).reshape(3) - model.hip_offsets[leg]
    L1, L2 = model.thigh_length, model.shank_length
    r_yz = float(np.hypot(v[1], v[2]))
    if r_yz < 1e-12:
        raise ModelError("foot target on the hip abduction axis is singular")
    q1 = float(np.arctan2(v[1], -v[2]))
    # planar 2R in the abduction-rotated frame: reach (X, Z) with
    # L1 sin q2 + L2 sin(q2+q3) = X and L1 cos q2 + L2 cos(q2+q3) = Z
    X, Z = -float(v[0]), r_yz
    d2 = X * X + Z * Z
    cos_knee = (d2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if abs(cos_knee) > 1.0:
        raise ModelError(f"foot target out of reach for leg {leg}")
    q3 = float(knee_sign) * float(np.arccos(np.clip(cos_knee, -1.0, 1.0)))
    q2 = float(np.arctan2(X, Z) - np.arctan2(L2 * np.sin(q3), L1 + L2 * np.cos(q3)))
    return np.array([q1, q2, q3])
