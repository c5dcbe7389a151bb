"""Ground-truth constrained rigid-body simulator.

Stance feet are pinned by bilateral constraints (Baumgarte stabilized) and
their reaction forces are monitored against the *exact* friction cone, so a
slip is a crisp detected event rather than a penalty artifact.  Environment
objects (button, wall) act on the manipulating foot as explicit forces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maths import quat_derivative, quat_normalize
from .model import (
    NV,
    KinTree,
    RobotModel,
    RobotState,
    bias_forces,
    contact_jacobian,
    evaluate_kinematics,
    integrate_state,
    jacobian_rate,
    mass_matrix,
    _point_jacobian,
)

DT_DEFAULT = 1.0 / 400.0
BAUMGARTE_OMEGA = 20.0
BAUMGARTE_ZETA = 1.0


class SimError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# environment objects
# ---------------------------------------------------------------------------

@dataclass
class Button:
    """1D spring + damper along `axis` with a stiffening travel stop.

    The button surface is the plane through `surface_point` with outward
    normal `axis`; pressing moves the foot against the axis direction.  The
    stop engages quadratically over `stop_width` (a stiffening bumper, not a
    discontinuous stiffness switch).
    """

    surface_point: np.ndarray
    axis: np.ndarray
    stiffness: float = 2000.0
    damping: float = 50.0
    travel: float = 0.03
    stop_stiffness_ratio: float = 20.0
    stop_width: float = 0.004

    def __post_init__(self) -> None:
        self.surface_point = np.asarray(self.surface_point, dtype=float).reshape(3)
        a = np.asarray(self.axis, dtype=float).reshape(3)
        self.axis = a / np.linalg.norm(a)

    def force_on_foot(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        depth = float(self.axis @ (self.surface_point - p))
        if depth <= 0.0:
            return np.zeros(3)
        rate = -float(self.axis @ v)
        f = self.stiffness * depth + self.damping * rate
        over = depth - self.travel
        if over > 0.0:
            k_stop = self.stop_stiffness_ratio * self.stiffness
            if over < self.stop_width:
                f += 0.5 * k_stop * over * over / self.stop_width
            else:
                f += k_stop * (over - 0.5 * self.stop_width)
        return max(f, 0.0) * self.axis


@dataclass
class Wall:
    """Unilateral plane: pushes back only while penetrated."""

    point: np.ndarray
    normal: np.ndarray
    stiffness: float = 4000.0
    damping: float = 80.0

    def __post_init__(self) -> None:
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        n = np.asarray(self.normal, dtype=float).reshape(3)
        self.normal = n / np.linalg.norm(n)

    def force_on_foot(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        depth = float(self.normal @ (self.point - p))
        if depth <= 0.0:
            return np.zeros(3)
        rate = -float(self.normal @ v)
        f = self.stiffness * depth + self.damping * rate
        return max(f, 0.0) * self.normal


@dataclass
class Pipe:
    """Cylinder used as guidance geometry only (posture alignment checks)."""

    axis_point: np.ndarray
    axis_dir: np.ndarray
    radius: float = 0.06

    def __post_init__(self) -> None:
        self.axis_point = np.asarray(self.axis_point, dtype=float).reshape(3)
        d = np.asarray(self.axis_dir, dtype=float).reshape(3)
        self.axis_dir = d / np.linalg.norm(d)

    def force_on_foot(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.zeros(3)

    def alignment_error(self, foot_rot: np.ndarray) -> float:
        """Angle between the foot z axis (shank axis) and the pipe axis."""
        c = abs(float(foot_rot[:, 2] @ self.axis_dir))
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlipEvent:
    time: float
    leg: int
    constraint: str            # "cone" | "unilateral" | "torque"
    magnitude: float
    direction: tuple = ()      # outward normal of the violated cone facet


def slip_check(lam: np.ndarray, mu: float, tau: np.ndarray, tau_min, tau_max,
               stance_legs, time: float, active: dict) -> list[SlipEvent]:
    """Exact-cone, unilateral and torque-limit monitoring.

    `active` tracks per-(leg, kind) violation state so one event is emitted
    per contiguous violation.
    """
    events = []
    lam = np.asarray(lam, dtype=float).reshape(-1)
    for idx, leg in enumerate(stance_legs):
        f = lam[3 * idx: 3 * idx + 3]
        tangential = float(np.hypot(f[0], f[1]))
        cone_excess = tangential - mu * f[2]
        key = (leg, "cone")
        if cone_excess > 1e-6:
            if not active.get(key):
                t_hat = f[0:2] / max(tangential, 1e-12)
                normal = np.array([t_hat[0], t_hat[1], -mu])
                normal /= np.linalg.norm(normal)
                events.append(SlipEvent(time, leg, "cone", cone_excess,
                                        tuple(normal.tolist())))
                active[key] = True
        else:
            active[key] = False
        key = (leg, "unilateral")
        if f[2] < -1e-6:
            if not active.get(key):
                events.append(SlipEvent(time, leg, "unilateral", -float(f[2]),
                                        (0.0, 0.0, -1.0)))
                active[key] = True
        else:
            active[key] = False
    tau = np.asarray(tau, dtype=float).reshape(-1)
    over = np.maximum(tau - np.asarray(tau_max), np.asarray(tau_min) - tau)
    for j in np.nonzero(over > 1e-6)[0]:
        leg = int(j) // 3
        key = (leg, f"torque{j}")
        if not active.get(key):
            events.append(SlipEvent(time, leg, "torque", float(over[j])))
            active[key] = True
    for j in np.nonzero(over <= 1e-6)[0]:
        active.pop((int(j) // 3, f"torque{j}"), None)
    return events


# ---------------------------------------------------------------------------
# constrained dynamics
# ---------------------------------------------------------------------------

def constrained_forward_dynamics(model: RobotModel, state: RobotState, tau: np.ndarray,
                                 stance_legs, anchors: np.ndarray | None = None,
                                 foot_force: tuple[int, np.ndarray] | None = None,
                                 baumgarte: bool = True,
                                 kin: KinTree | None = None):
    """Solve the pinned-contact KKT system for (udot, lambda).

    tau is the actuated torque (12,); foot_force optionally applies a world
    force to one foot (environment interaction).  lambda is the stance
    reaction acting on the robot, stacked per stance foot.
    """
    if kin is None:
        kin = evaluate_kinematics(model, state)
    stance_legs = tuple(stance_legs)
    if not stance_legs:
        raise SimError("need at least one stance foot")
    J_c = contact_jacobian(model, state, stance_legs, kin)
    svals = np.linalg.svd(J_c, compute_uv=False)
    if svals[-1] < 1e-10 * svals[0]:
        raise SimError("contact Jacobian rank deficient (singular stance)")

    M = mass_matrix(model, state, kin)
    h = bias_forces(model, state, kin)
    u = state.velocity

    gen = np.zeros(NV)
    gen[6:] = np.asarray(tau, dtype=float).reshape(12)
    if foot_force is not None:
        leg, F = foot_force
        J_ext = _point_jacobian(kin, leg, kin.foot_pos[leg])
        gen += J_ext.T @ np.asarray(F, dtype=float).reshape(3)

    Jdot_c = jacobian_rate(model, state, lambda s: contact_jacobian(model, s, stance_legs))
    rhs_c = -Jdot_c @ u
    if baumgarte:
        vel_drift = J_c @ u
        rhs_c -= 2.0 * BAUMGARTE_ZETA * BAUMGARTE_OMEGA * vel_drift
        if anchors is not None:
            pos_drift = np.concatenate([
                kin.foot_pos[leg] - anchors[i] for i, leg in enumerate(stance_legs)])
            rhs_c -= BAUMGARTE_OMEGA ** 2 * pos_drift

    k3 = J_c.shape[0]
    KKT = np.zeros((NV + k3, NV + k3))
    KKT[:NV, :NV] = M
    KKT[:NV, NV:] = -J_c.T
    KKT[NV:, :NV] = J_c
    rhs = np.concatenate([gen - h, rhs_c])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError as err:
        raise SimError(f"singular KKT system: {err}") from err
    return sol[:NV], sol[NV:]


# ---------------------------------------------------------------------------
# world stepping
# ---------------------------------------------------------------------------

@dataclass
class SimWorld:
    model: RobotModel
    state: RobotState
    stance_legs: tuple = (1, 2, 3)
    manipulating_leg: int = 0
    objects: list = field(default_factory=list)
    dt: float = DT_DEFAULT
    # ground-truth integration substeps per control period (ZOH torque);
    # keeps stiff environment springs stable under the 400 Hz loop
    substeps: int = 4
    time: float = 0.0
    anchors: np.ndarray | None = None
    events: list = field(default_factory=list)
    last_contact_force: np.ndarray | None = None      # stance reactions (3k,)
    last_foot_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    halted: str | None = None
    _violation_state: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.anchors is None:
            kin = evaluate_kinematics(self.model, self.state)
            self.anchors = np.array([kin.foot_pos[leg] for leg in self.stance_legs])

    def environment_force(self, kin: KinTree | None = None) -> np.ndarray:
        """Total world force the environment applies to the manipulating foot."""
        if kin is None:
            kin = evaluate_kinematics(self.model, self.state)
        leg = self.manipulating_leg
        p = kin.foot_pos[leg]
        J = _point_jacobian(kin, leg, p)
        v = J @ self.state.velocity
        total = np.zeros(3)
        for obj in self.objects:
            total += obj.force_on_foot(p, v)
        return total

    def stance_drift(self) -> float:
        kin = evaluate_kinematics(self.model, self.state)
        return float(max(
            np.linalg.norm(kin.foot_pos[leg] - self.anchors[i])
            for i, leg in enumerate(self.stance_legs)))


def step(world: SimWorld, tau: np.ndarray) -> SimWorld:
    """One control period: `substeps` semi-implicit Euler substeps under the
    zero-order-held torque; events are appended to the world log."""
    if world.halted:
        return world
    n = max(1, int(world.substeps))
    h = world.dt / n
    for _ in range(n):
        kin = evaluate_kinematics(world.model, world.state)
        F_env = world.environment_force(kin)
        udot, lam = constrained_forward_dynamics(
            world.model, world.state, tau, world.stance_legs, world.anchors,
            foot_force=(world.manipulating_leg, F_env), kin=kin)
        if not np.all(np.isfinite(udot)) or not np.all(np.isfinite(lam)):
            world.halted = f"non-finite dynamics at t={world.time:.4f}"
            return world
        u_new = world.state.velocity + h * udot
        world.state = integrate_state(world.state, u_new, h)
        world.time += h
        world.last_contact_force = lam
        world.last_foot_force = F_env
    world.events.extend(slip_check(
        world.last_contact_force, world.model.friction_coeff, tau,
        world.model.tau_min, world.model.tau_max, world.stance_legs,
        world.time, world._violation_state))
    return world


def _state_derivative(model, state, tau, stance_legs, anchors, manipulating_leg, objects):
    kin = evaluate_kinematics(model, state)
    p = kin.foot_pos[manipulating_leg]
    v = _point_jacobian(kin, manipulating_leg, p) @ state.velocity
    F_env = np.zeros(3)
    for obj in objects:
        F_env += obj.force_on_foot(p, v)
    udot, _ = constrained_forward_dynamics(
        model, state, tau, stance_legs, anchors,
        foot_force=(manipulating_leg, F_env), kin=kin)
    R = state.base_rot
    return {
        "pos": R @ state.velocity[0:3],
        "quat": quat_derivative(state.base_quat, state.velocity[3:6]),
        "qj": state.velocity[6:18],
        "u": udot,
    }


def rk4_step(world: SimWorld, tau: np.ndarray) -> SimWorld:
    """Classic RK4 step (used by the energy-audit oracle; the product loop
    uses the semi-implicit step)."""
    s0 = world.state
    dt = world.dt

    def combine(s, k, factor):
        quat = s.base_quat + factor * k["quat"]
        return RobotState(
            s.base_pos + factor * k["pos"],
            quat_normalize(quat),
            s.q_joints + factor * k["qj"],
            s.velocity + factor * k["u"],
        )

    args = (world.model, tau, world.stance_legs, world.anchors,
            world.manipulating_leg, world.objects)

    def deriv(s):
        return _state_derivative(args[0], s, args[1], args[2], args[3], args[4], args[5])

    k1 = deriv(s0)
    k2 = deriv(combine(s0, k1, 0.5 * dt))
    k3 = deriv(combine(s0, k2, 0.5 * dt))
    k4 = deriv(combine(s0, k3, dt))

    pos = s0.base_pos + dt / 6.0 * (k1["pos"] + 2 * k2["pos"] + 2 * k3["pos"] + k4["pos"])
    quat = s0.base_quat + dt / 6.0 * (k1["quat"] + 2 * k2["quat"] + 2 * k3["quat"] + k4["quat"])
    qj = s0.q_joints + dt / 6.0 * (k1["qj"] + 2 * k2["qj"] + 2 * k3["qj"] + k4["qj"])
    u = s0.velocity + dt / 6.0 * (k1["u"] + 2 * k2["u"] + 2 * k3["u"] + k4["u"])
    world.state = RobotState(pos, quat_normalize(quat), qj, u)
    world.time += dt
    return world


def unconstrained_rk4_step(model: RobotModel, state: RobotState, dt: float) -> RobotState:
    """Free-floating RK4 step with zero torque (energy-audit oracle)."""
    def deriv(s):
        M = mass_matrix(model, s)
        h = bias_forces(model, s)
        udot = np.linalg.solve(M, -h)
        R = s.base_rot
        return {
            "pos": R @ s.velocity[0:3],
            "quat": quat_derivative(s.base_quat, s.velocity[3:6]),
            "qj": s.velocity[6:18],
            "u": udot,
        }

    def combine(s, k, factor):
        return RobotState(
            s.base_pos + factor * k["pos"],
            quat_normalize(s.base_quat + factor * k["quat"]),
            s.q_joints + factor * k["qj"],
            s.velocity + factor * k["u"],
        )

    k1 = deriv(state)
    k2 = deriv(combine(state, k1, 0.5 * dt))
    k3 = deriv(combine(state, k2, 0.5 * dt))
    k4 = deriv(combine(state, k3, dt))
    pos = state.base_pos + dt / 6.0 * (k1["pos"] + 2 * k2["pos"] + 2 * k3["pos"] + k4["pos"])
    quat = state.base_quat + dt / 6.0 * (k1["quat"] + 2 * k2["quat"] + 2 * k3["quat"] + k4["quat"])
    qj = state.q_joints + dt / 6.0 * (k1["qj"] + 2 * k2["qj"] + 2 * k3["qj"] + k4["qj"])
    u = state.velocity + dt / 6.0 * (k1["u"] + 2 * k2["u"] + 2 * k3["u"] + k4["u"])
    return RobotState(pos, quat_normalize(quat), qj, u)
