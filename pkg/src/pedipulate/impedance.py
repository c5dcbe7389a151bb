"""Analytical operational-space impedance control and external-wrench
estimation for the foot and base tasks.

Task coordinate conventions (matching frame_jacobian):
  rows=3  position only, world frame
  rows=6  position + orientation, angular part as world rotation vector
  rows=5  position + the x/y angular components in the task frame itself
          (the frame-yaw row is dropped)

The wrench estimator reports the force the foot applies to the environment,
i.e. the negated disturbance acting on the foot: pressing 2 cm into a wall
with a 500 N/m spring reads +10 N along the pressing direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maths import rot_log, svd_pinv
from .model import N_JOINTS, NV


class ControlError(RuntimeError):
    pass


@dataclass
class ImpedanceGains:
    """Diagonal stiffness/damping for one task."""

    K: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        self.K = np.asarray(self.K, dtype=float).reshape(-1)
        self.D = np.asarray(self.D, dtype=float).reshape(-1)
        if self.K.shape != self.D.shape:
            raise ControlError("stiffness and damping must have equal length")
        if np.any(self.K < 0) or np.any(self.D < 0):
            raise ControlError("gains must be nonnegative")

    @property
    def rows(self) -> int:
        return self.K.shape[0]


def critically_damped(K, inertia_diag) -> ImpedanceGains:
    """D = 2 sqrt(Lambda K) per axis for roughly critical damping."""
    K = np.asarray(K, dtype=float).reshape(-1)
    lam = np.asarray(inertia_diag, dtype=float).reshape(-1)
    return ImpedanceGains(K=K, D=2.0 * np.sqrt(np.maximum(lam * K, 0.0)))


@dataclass
class TaskTarget:
    """Desired pose and world-frame twist/acceleration of a task frame."""

    pos: np.ndarray                       # (3,)
    rot: np.ndarray                       # (3,3) desired orientation
    vel: np.ndarray = field(default_factory=lambda: np.zeros(6))   # (v_w, w_w)
    acc: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self) -> None:
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        self.rot = np.asarray(self.rot, dtype=float).reshape(3, 3)
        self.vel = np.asarray(self.vel, dtype=float).reshape(6)
        self.acc = np.asarray(self.acc, dtype=float).reshape(6)


def task_error(pos, rot, target: TaskTarget, rows: int) -> np.ndarray:
    """e = x - x_d in task coordinates (orientation via rotation log map)."""
    e_pos = np.asarray(pos, dtype=float).reshape(3) - target.pos
    if rows == 3:
        return e_pos
    w_world = rot_log(np.asarray(rot).reshape(3, 3) @ target.rot.T)
    if rows == 6:
        return np.concatenate([e_pos, w_world])
    R = np.asarray(rot, dtype=float).reshape(3, 3)
    return np.concatenate([e_pos, (R.T @ w_world)[0:2]])


def task_velocity_rows(rot, vel6: np.ndarray, rows: int) -> np.ndarray:
    """Project a world twist (v, w) onto the task rows."""
    vel6 = np.asarray(vel6, dtype=float).reshape(6)
    if rows == 3:
        return vel6[0:3]
    if rows == 6:
        return vel6
    R = np.asarray(rot, dtype=float).reshape(3, 3)
    return np.concatenate([vel6[0:3], (R.T @ vel6[3:6])[0:2]])


@dataclass
class OpSpaceTerms:
    """Operational-space inertia and gravity/velocity compensation."""

    Lambda: np.ndarray                    # (m,m)
    h_c: np.ndarray                       # (m,)
    condition: float


def op_space_terms(J: np.ndarray, Jdot: np.ndarray, M_c: np.ndarray,
                   P: np.ndarray, h: np.ndarray, Pdot: np.ndarray,
                   u: np.ndarray, sigma_min: float = 1e-8) -> OpSpaceTerms:
    """Lambda = (J M_c^-1 P J^T)^-1 and
    h_c = Lambda [J M_c^-1 (P h - Pdot u) - Jdot u]."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    Mc_inv = np.linalg.inv(M_c)
    lam_inv = J @ Mc_inv @ P @ J.T
    svals = np.linalg.svd(lam_inv, compute_uv=False)
    if svals[-1] < sigma_min * max(1.0, svals[0]):
        raise ControlError(
            f"singular task-space inertia (cond={svals[0] / max(svals[-1], 1e-300):.3e})")
    Lambda = np.linalg.inv(lam_inv)
    Lambda = 0.5 * (Lambda + Lambda.T)
    h_c = Lambda @ (J @ Mc_inv @ (P @ h - Pdot @ u) - np.atleast_2d(Jdot) @ u)
    return OpSpaceTerms(Lambda=Lambda, h_c=h_c, condition=float(svals[0] / svals[-1]))


def impedance_wrench(e: np.ndarray, edot: np.ndarray, acc_des: np.ndarray,
                     gains: ImpedanceGains, ops: OpSpaceTerms) -> np.ndarray:
    """F = h_c + Lambda xdd_d - D edot - K e."""
    e = np.asarray(e, dtype=float).reshape(-1)
    edot = np.asarray(edot, dtype=float).reshape(-1)
    acc_des = np.asarray(acc_des, dtype=float).reshape(-1)
    return ops.h_c + ops.Lambda @ acc_des - gains.D * edot - gains.K * e


def compose_torques(J_s: np.ndarray, F_s: np.ndarray, N_s: np.ndarray,
                    J_b: np.ndarray, F_b: np.ndarray, P: np.ndarray,
                    B: np.ndarray, tau_c: np.ndarray | None = None,
                    null_space_force: np.ndarray | None = None,
                    rtol: float = 1e-8) -> np.ndarray:
    """Actuated torque realizing the prioritized motion-space wrenches:
    tau = [(P B)^+ P (J_s^T F_s + N_s J_b^T F_b)]_actuated + tau_c.

    null_space_force (18,) is an optional secondary-priority generalized
    force (e.g. joint damping of internal motions); it shares the base task's
    N_s filter, so it cannot accelerate the foot task.
    """
    lower = J_b.T @ np.asarray(F_b, dtype=float)
    if null_space_force is not None:
        lower = lower + np.asarray(null_space_force, dtype=float).reshape(NV)
    tau_m_gen = P @ (J_s.T @ np.asarray(F_s, dtype=float) + N_s @ lower)
    PB_pinv = svd_pinv(P @ B, rtol)
    tau_full = PB_pinv @ tau_m_gen
    realized = P @ B @ tau_full
    scale = max(1.0, float(np.linalg.norm(tau_m_gen)))
    if np.linalg.norm(realized - tau_m_gen) > 1e-6 * scale:
        raise ControlError("motion torque not realizable: P B lost rank")
    tau = tau_full[6:].copy()
    if tau_c is not None:
        tau = tau + np.asarray(tau_c, dtype=float).reshape(N_JOINTS)
    return tau


@dataclass
class WrenchEstimate:
    """Estimated interaction wrench at the task frame (applied convention)."""

    F: np.ndarray                         # (m,) after deadband
    raw: np.ndarray                       # (m,) before deadband
    mode: str
    threshold: float

    @property
    def force(self) -> np.ndarray:
        return self.F[0:3]

    @property
    def moment(self) -> np.ndarray:
        return self.F[3:]


def estimate_wrench(e: np.ndarray, edot: np.ndarray | None,
                    eddot: np.ndarray | None, gains: ImpedanceGains,
                    Lambda: np.ndarray | None, mode: str = "position-only",
                    threshold: float = 5.0) -> WrenchEstimate:
    """Contact wrench from tracking error; componentwise deadband at
    `threshold` suppresses non-contact noise."""
    e = np.asarray(e, dtype=float).reshape(-1)
    if mode == "position-only":
        raw = gains.K * e
    elif mode == "full":
        if edot is None or eddot is None or Lambda is None:
            raise ControlError("full estimation mode needs edot, eddot and Lambda")
        raw = (np.asarray(Lambda) @ np.asarray(eddot, dtype=float).reshape(-1)
               + gains.D * np.asarray(edot, dtype=float).reshape(-1)
               + gains.K * e)
    else:
        raise ControlError(f"unknown estimation mode {mode!r}")
    applied = -raw
    F = np.where(np.abs(applied) < threshold, 0.0, applied)
    return WrenchEstimate(F=F, raw=applied, mode=mode, threshold=float(threshold))


class FilteredDifferentiator:
    """Numeric first/second derivatives behind a second-order low-pass.

    Used by the full estimation mode; velocity and acceleration signals are
    noisy, so both derivative estimates share one critically damped filter.
    """

    def __init__(self, rows: int, dt: float, cutoff_hz: float = 20.0):
        self.dt = float(dt)
        w = 2.0 * np.pi * float(cutoff_hz)
        self._w = w
        self._x = np.zeros(rows)
        self._v = np.zeros(rows)
        self._initialized = False

    def update(self, e: np.ndarray):
        e = np.asarray(e, dtype=float).reshape(-1)
        if not self._initialized:
            self._x = e.copy()
            self._initialized = True
        # critically damped tracking filter: a = w^2 (e - x) - 2 w v
        a = self._w ** 2 * (e - self._x) - 2.0 * self._w * self._v
        self._v = self._v + self.dt * a
        self._x = self._x + self.dt * self._v
        return self._v.copy(), a
