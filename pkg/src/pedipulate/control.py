"""Per-tick whole-body controller: cascaded foot/base Cartesian impedance
through the motion-space projector, plus the constraint-space QP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .impedance import (
    ControlError,
    FilteredDifferentiator,
    ImpedanceGains,
    OpSpaceTerms,
    TaskTarget,
    WrenchEstimate,
    compose_torques,
    estimate_wrench,
    impedance_wrench,
    op_space_terms,
    task_error,
    task_velocity_rows,
)
from .model import (
    RobotModel,
    RobotState,
    compute_dynamics_terms,
    evaluate_kinematics,
    leg_inverse_kinematics,
)
from .projection import compute_projection
from .qp import QpSolution, contact_force_map, linearize_friction, solve_constraint_qp

FOOT_K_DEFAULT = (500.0, 500.0, 500.0, 50.0, 50.0)
BASE_K_DEFAULT = (800.0, 800.0, 800.0, 300.0, 300.0, 300.0)


@dataclass
class ControllerConfig:
    task_rows: int = 5
    foot_stiffness: tuple = FOOT_K_DEFAULT
    base_stiffness: tuple = BASE_K_DEFAULT
    foot_damping: tuple | None = None      # None: critically damped at setup
    base_damping: tuple | None = None
    friction_facets: int = 4
    estimator_mode: str = "position-only"
    estimator_threshold: float = 5.0       # N; deadband on the reported wrench
    qp_enabled: bool = True
    dt: float = 1.0 / 400.0
    # viscous damping on joint rates, N_s-filtered so the foot task never
    # sees it; stabilizes the internal (task-null) motions of an otherwise
    # frictionless model
    null_damping: float = 2.0


@dataclass
class TickResult:
    tau: np.ndarray                        # (12,) command
    tau_motion: np.ndarray                 # (12,)
    tau_constraint: np.ndarray             # (12,)
    wrench_estimate: WrenchEstimate
    qp: QpSolution | None
    foot_error: np.ndarray
    base_error: np.ndarray
    predicted_contact_force: np.ndarray | None
    foot_ops: OpSpaceTerms
    base_ops: OpSpaceTerms
    alarms: tuple = ()


class WholeBodyController:
    """Foot-priority impedance hierarchy with contact-force QP.

    One instance owns one control loop: it keeps the QP warm start and the
    estimator filter state, and holds the previous constraint torque when the
    QP reports infeasibility (raising an alarm instead of commanding junk).
    """

    def __init__(self, model: RobotModel, state: RobotState,
                 cfg: ControllerConfig | None = None,
                 stance_legs=(1, 2, 3), task_leg: int = 0):
        self.model = model
        self.cfg = cfg or ControllerConfig()
        self.stance_legs = tuple(stance_legs)
        self.task_leg = int(task_leg)
        rows = self.cfg.task_rows
        if len(self.cfg.foot_stiffness) != rows:
            raise ControlError("foot stiffness length must match task rows")

        self.pyramid = linearize_friction(model.friction_coeff, self.cfg.friction_facets)

        self._K_s = np.asarray(self.cfg.foot_stiffness, dtype=float)
        self._K_b = np.asarray(self.cfg.base_stiffness, dtype=float)
        # safety factor under the ZOH damping stability bound 2/dt
        self._damping_rate_limit = 1.2 / self.cfg.dt
        terms = compute_dynamics_terms(model, state, self.stance_legs,
                                       self.task_leg, rows)
        proj = compute_projection(terms.J_c, terms.Jdot_c, terms.M, terms.J_s)
        ops_s = op_space_terms(terms.J_s, terms.Jdot_s, proj.M_c, proj.P,
                               terms.h, proj.Pdot, state.velocity)
        ops_b = op_space_terms(terms.J_b, terms.Jdot_b, proj.M_c, proj.P,
                               terms.h, proj.Pdot, state.velocity)
        self.foot_gains = self._gains(ops_s, self._K_s, self.cfg.foot_damping)
        self.base_gains = self._gains(ops_b, self._K_b, self.cfg.base_damping)

        self._qp_seed: tuple = ()
        self._tau_c_hold = np.zeros(12)
        self._diff = FilteredDifferentiator(rows, self.cfg.dt)

    def _gains(self, ops: OpSpaceTerms, K: np.ndarray, damping) -> ImpedanceGains:
        """Damping follows the configuration-dependent task inertia
        (critical damping per axis) unless fixed explicitly.

        The fastest damping mode of the pair (Lambda, D) is capped below the
        zero-order-hold stability limit 2/dt: diagonal damping against a
        cross-coupled task inertia can otherwise put a modal decay rate past
        what the discrete loop supports.
        """
        if damping is not None:
            D = np.asarray(damping, dtype=float)
        else:
            D = 2.0 * np.sqrt(np.abs(np.diag(ops.Lambda)) * K)
        rates = np.linalg.eigvals(np.linalg.solve(ops.Lambda, np.diag(D)))
        g_max = float(np.max(np.abs(rates)))
        limit = self._damping_rate_limit
        if g_max > limit:
            D = D * (limit / g_max)
        return ImpedanceGains(K=K, D=D)

    def tick(self, state: RobotState, foot_target: TaskTarget,
             base_target: TaskTarget) -> TickResult:
        cfg = self.cfg
        rows = cfg.task_rows
        terms = compute_dynamics_terms(self.model, state, self.stance_legs,
                                       self.task_leg, rows)
        proj = compute_projection(terms.J_c, terms.Jdot_c, terms.M, terms.J_s)
        u = state.velocity

        ops_s = op_space_terms(terms.J_s, terms.Jdot_s, proj.M_c, proj.P,
                               terms.h, proj.Pdot, u)
        ops_b = op_space_terms(terms.J_b, terms.Jdot_b, proj.M_c, proj.P,
                               terms.h, proj.Pdot, u)
        self.foot_gains = self._gains(ops_s, self._K_s, self.cfg.foot_damping)
        self.base_gains = self._gains(ops_b, self._K_b, self.cfg.base_damping)

        kin = terms.kin
        foot_pos = kin.foot_pos[self.task_leg]
        foot_rot = kin.foot_rot[self.task_leg]
        e_s = task_error(foot_pos, foot_rot, foot_target, rows)
        edot_s = terms.J_s @ u - task_velocity_rows(foot_rot, foot_target.vel, rows)
        acc_s = task_velocity_rows(foot_rot, foot_target.acc, rows)
        F_s = impedance_wrench(e_s, edot_s, acc_s, self.foot_gains, ops_s)

        e_b = task_error(kin.base_pos, kin.base_rot, base_target, 6)
        edot_b = terms.J_b @ u - base_target.vel
        F_b = impedance_wrench(e_b, edot_b, base_target.acc, self.base_gains, ops_b)

        ns_force = np.zeros(18)
        ns_force[6:] = -cfg.null_damping * u[6:]
        tau_m = compose_torques(terms.J_s, F_s, proj.N_s, terms.J_b, F_b,
                                proj.P, terms.B, null_space_force=ns_force)

        alarms = []
        qp_sol = None
        predicted = None
        tau_c = np.zeros(12)
        if cfg.qp_enabled:
            cmap = contact_force_map(tau_m, terms, proj, state)
            qp_sol = solve_constraint_qp(cmap, self.model.tau_min, self.model.tau_max,
                                         tau_m, self.pyramid, seed_active=self._qp_seed)
            if qp_sol.ok:
                tau_c = qp_sol.tau_c
                self._tau_c_hold = tau_c.copy()
                self._qp_seed = qp_sol.active_set
            else:
                tau_c = self._tau_c_hold.copy()
                alarms.append(f"qp-{qp_sol.status}")
            predicted = cmap.contact_force(tau_c)

        ed_hat, edd_hat = self._diff.update(e_s)
        estimate = estimate_wrench(
            e_s, ed_hat, edd_hat, self.foot_gains, ops_s.Lambda,
            mode=cfg.estimator_mode, threshold=cfg.estimator_threshold)

        return TickResult(
            tau=tau_m + tau_c,
            tau_motion=tau_m,
            tau_constraint=tau_c,
            wrench_estimate=estimate,
            qp=qp_sol,
            foot_error=e_s,
            base_error=e_b,
            predicted_contact_force=predicted,
            foot_ops=ops_s,
            base_ops=ops_b,
            alarms=tuple(alarms),
        )


# ---------------------------------------------------------------------------
# pose construction helpers
# ---------------------------------------------------------------------------

def standing_state(model: RobotModel, base_height: float = 0.42,
                   foot_spread: np.ndarray | None = None) -> RobotState:
    """All four feet on the ground plane below their hips, base level."""
    state = RobotState(np.array([0.0, 0.0, base_height]), [1, 0, 0, 0], np.zeros(12))
    qj = np.zeros(12)
    for leg in range(4):
        target_world = model.hip_offsets[leg] + np.array([0.0, 0.0, base_height])
        target_world[2] = 0.0
        if foot_spread is not None:
            target_world[0:2] += np.asarray(foot_spread, dtype=float).reshape(4, 2)[leg]
        target_base = target_world - np.array([0.0, 0.0, base_height])
        qj[3 * leg: 3 * leg + 3] = leg_inverse_kinematics(model, leg, target_base)
    return RobotState(np.array([0.0, 0.0, base_height]), [1, 0, 0, 0], qj)


def manipulation_stance(model: RobotModel, base_height: float = 0.42,
                        base_shift=(-0.09, -0.05), foot_lift: float = 0.08,
                        foot_reach: float = 0.08) -> RobotState:
    """Three stance feet planted wide with the base over their centroid, and
    the manipulating foot (leg 0) lifted and reaching forward."""
    base_pos = np.array([base_shift[0], base_shift[1], base_height])
    qj = np.zeros(12)
    for leg in (1, 2, 3):
        foot_world = np.array([model.hip_offsets[leg][0],
                               model.hip_offsets[leg][1], 0.0])
        qj[3 * leg: 3 * leg + 3] = leg_inverse_kinematics(
            model, leg, foot_world - base_pos)
    foot0_world = np.array([model.hip_offsets[0][0] + foot_reach,
                            model.hip_offsets[0][1], foot_lift])
    qj[0:3] = leg_inverse_kinematics(model, 0, foot0_world - base_pos)
    return RobotState(base_pos, [1, 0, 0, 0], qj)


def targets_from_state(model: RobotModel, state: RobotState, task_leg: int = 0):
    """Hold targets at the current foot/base pose."""
    kin = evaluate_kinematics(model, state)
    foot = TaskTarget(pos=kin.foot_pos[task_leg].copy(), rot=kin.foot_rot[task_leg].copy())
    base = TaskTarget(pos=kin.base_pos.copy(), rot=kin.base_rot.copy())
    return foot, base
