"""Constraint-space quadratic program for contact-force regulation.

The motion torque from the impedance hierarchy fixes the robot's acceleration;
the contact forces respond affinely to any extra actuated torque tau_c.  The
QP picks the smallest tau_c keeping every stance contact inside its friction
pyramid and every joint inside its torque limits.

The solver is a dense dual active-set method specialized to the identity
Hessian (minimum-norm projection onto a polyhedron): it starts at tau_c = 0,
adds violated constraints one at a time and produces either the optimum with
multipliers or an infeasibility certificate.  Pivoting is deterministic
(lowest index first).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maths import svd_pinv
from .model import DynamicsTerms, N_JOINTS, NV, RobotState
from .projection import ProjectionSet


class QpError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# friction linearization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrictionPyramid:
    """Inscribed friction pyramid: A lam <= 0 implies the exact cone holds."""

    A: np.ndarray          # (facets+1, 3): facet rows then the unilateral row
    mu: float
    mu_eff: float
    facets: int


def linearize_friction(mu: float, facets: int = 4) -> FrictionPyramid:
    """Conservative halfspace model of the friction cone plus unilaterality.

    mu_eff = mu * cos(pi/facets) inscribes the pyramid inside the exact cone,
    so pyramid-feasible forces are always cone-feasible.
    """
    if mu <= 0:
        raise QpError("friction coefficient must be > 0")
    if facets < 4:
        raise QpError("need at least 4 pyramid facets")
    mu_eff = mu * np.cos(np.pi / facets)
    rows = []
    for j in range(facets):
        th = 2.0 * np.pi * j / facets
        rows.append([np.cos(th), np.sin(th), -mu_eff])
    rows.append([0.0, 0.0, -1.0])
    return FrictionPyramid(A=np.array(rows), mu=float(mu), mu_eff=float(mu_eff),
                           facets=int(facets))


# ---------------------------------------------------------------------------
# contact force map
# ---------------------------------------------------------------------------

@dataclass
class ContactForceMap:
    """Affine response of the stance contact forces to the extra torque:
    lambda(tau_c) = eta - G tau_c, derived from one state snapshot."""

    eta: np.ndarray        # (3k,)
    G: np.ndarray          # (3k, 12)
    stance_legs: tuple

    def contact_force(self, tau_c: np.ndarray) -> np.ndarray:
        return self.eta - self.G @ np.asarray(tau_c, dtype=float).reshape(N_JOINTS)


def contact_force_map(tau_m: np.ndarray, terms: DynamicsTerms, proj: ProjectionSet,
                      state: RobotState, external_force: np.ndarray | None = None,
                      rtol: float = 1e-8) -> ContactForceMap:
    """Build lambda(tau_c) = eta - G tau_c around the motion torque tau_m.

    tau_m is the actuated motion torque (12,) and is held constant; tau_c is
    the additional actuated torque the QP optimizes.  The map is exact for
    the pinned-contact dynamics: it keeps both the direct effect of torque on
    the constraint space and the indirect effect through the acceleration.
    external_force is an optional known generalized force (18,).
    """
    J_c = terms.J_c
    if J_c.shape[0] == 0:
        raise QpError("contact force map needs at least one stance foot")
    svals = np.linalg.svd(J_c, compute_uv=False)
    if svals[-1] < rtol * svals[0]:
        raise QpError("contact Jacobian is rank deficient")

    tau_m = np.asarray(tau_m, dtype=float).reshape(N_JOINTS)
    u = state.velocity
    g_ext = np.zeros(NV) if external_force is None else np.asarray(external_force, dtype=float).reshape(NV)

    JcT_pinv = svd_pinv(J_c.T, rtol)                    # (3k, 18)
    Mc_inv = np.linalg.inv(proj.M_c)
    applied = np.zeros(NV)
    applied[6:] = tau_m
    applied += g_ext

    qdd0 = Mc_inv @ (proj.P @ applied - proj.P @ terms.h + proj.Pdot @ u)
    eta = JcT_pinv @ (terms.M @ qdd0 + terms.h - applied)

    # response to tau_c: direct constraint-space push minus the induced motion
    B_act = np.zeros((NV, N_JOINTS))
    B_act[6:, :] = np.eye(N_JOINTS)
    G = JcT_pinv @ (B_act - terms.M @ Mc_inv @ proj.P @ B_act)
    return ContactForceMap(eta=eta, G=G, stance_legs=terms.stance_legs)


# ---------------------------------------------------------------------------
# dense active-set solver (identity Hessian)
# ---------------------------------------------------------------------------

@dataclass
class QpSolution:
    tau_c: np.ndarray
    objective: float
    status: str                       # "optimal" | "infeasible" | "max-iter"
    stationarity: float
    primal_residual: float
    complementarity: float
    iterations: int
    active_set: tuple = ()
    violated_constraint: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def min_norm_qp(G: np.ndarray, h: np.ndarray, labels=None, max_iter: int = 200,
                tol: float = 1e-10, seed_active=()) -> QpSolution:
    """Minimize 0.5 ||x||^2 subject to G x <= h.

    Dual active-set iteration starting from the unconstrained optimum x = 0.
    `seed_active` warm-starts the working set: those rows are considered
    first when violated.  Returns multipliers folded into KKT residuals.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).reshape(-1)
    m, n = G.shape
    labels = list(labels) if labels is not None else [f"row {i}" for i in range(m)]
    C = -G                       # constraints c_i^T x >= b_i
    b = -h

    x = np.zeros(n)
    active: list[int] = []
    u: list[float] = []
    iters = 0
    pending = [int(i) for i in seed_active if 0 <= int(i) < m]

    def kkt(xv, act, uv):
        stat = xv.copy()
        for i, ui in zip(act, uv):
            stat -= ui * C[i]
        primal = float(np.max(G @ xv - h, initial=0.0))
        comp = 0.0
        for i, ui in zip(act, uv):
            comp = max(comp, abs(ui * (C[i] @ xv - b[i])))
        return float(np.max(np.abs(stat))), max(primal, 0.0), comp

    feas_tol = tol * max(1.0, float(np.max(np.abs(h), initial=1.0)))

    while iters < max_iter:
        iters += 1
        s = G @ x - h
        violated = np.nonzero(s > feas_tol)[0]
        if violated.size == 0:
            stat, primal, comp = kkt(x, active, u)
            return QpSolution(x, 0.5 * float(x @ x), "optimal", stat, primal, comp,
                              iters, tuple(active))
        p = -1
        for cand in pending:
            if cand in violated and cand not in active:
                p = cand
                break
        if p < 0:
            p = int(violated[0])      # lowest-index rule
        if p in pending:
            pending.remove(p)

        u_p = 0.0
        inner = 0
        while True:
            inner += 1
            if inner > m + 2:
                stat, primal, comp = kkt(x, active, u)
                return QpSolution(x, 0.5 * float(x @ x), "max-iter", stat, primal,
                                  comp, iters, tuple(active))
            c_p = C[p]
            if active:
                N = C[active].T
                r, *_ = np.linalg.lstsq(N, c_p, rcond=None)
                z = c_p - N @ r
            else:
                r = np.zeros(0)
                z = c_p.copy()
            z_norm2 = float(z @ z)
            if z_norm2 > 1e-14 * max(1.0, float(c_p @ c_p)):
                t2 = (b[p] - c_p @ x) / z_norm2
            else:
                t2 = np.inf
            t1, blocker = np.inf, -1
            for k, uk in enumerate(u):
                if r[k] > 1e-12 and uk / r[k] < t1 - 1e-15:
                    t1, blocker = uk / r[k], k
            if not np.isfinite(min(t1, t2)):
                # c_p is a nonnegative combination of active normals: infeasible.
                # name the worst violation at tau_c = 0 (the physical defect)
                worst = int(np.argmax(-h)) if np.max(-h) > feas_tol else int(np.argmax(s))
                stat, primal, comp = kkt(x, active, u)
                return QpSolution(x, 0.5 * float(x @ x), "infeasible", stat, primal,
                                  comp, iters, tuple(active),
                                  violated_constraint=labels[worst])
            if t2 <= t1:
                # full step: constraint p becomes active
                x = x + t2 * z
                u = [uk - t2 * rk for uk, rk in zip(u, r)]
                u_p += t2
                active.append(p)
                u.append(u_p)
                break
            # partial step to the blocking dual, then drop it and retry
            if np.isfinite(t2):
                x = x + t1 * z
            u = [uk - t1 * rk for uk, rk in zip(u, r)]
            u_p += t1
            active.pop(blocker)
            u.pop(blocker)

    stat, primal, comp = kkt(x, active, u)
    return QpSolution(x, 0.5 * float(x @ x), "max-iter", stat, primal, comp, iters,
                      tuple(active))


# ---------------------------------------------------------------------------
# constraint-space QP assembly
# ---------------------------------------------------------------------------

def assemble_constraint_qp(cmap: ContactForceMap, tau_min: np.ndarray,
                           tau_max: np.ndarray, tau_m: np.ndarray,
                           pyramid: FrictionPyramid):
    """Stack box bounds and per-foot pyramid rows into (G, h, labels)."""
    tau_m = np.asarray(tau_m, dtype=float).reshape(N_JOINTS)
    lb = np.asarray(tau_min, dtype=float).reshape(N_JOINTS) - tau_m
    ub = np.asarray(tau_max, dtype=float).reshape(N_JOINTS) - tau_m
    if np.any(lb > ub):
        j = int(np.nonzero(lb > ub)[0][0])
        raise QpError(f"empty torque box at joint {j}: motion torque exceeds limits")

    rows, rhs, labels = [], [], []
    eye = np.eye(N_JOINTS)
    for j in range(N_JOINTS):
        rows.append(eye[j])
        rhs.append(ub[j])
        labels.append(f"torque upper joint {j}")
    for j in range(N_JOINTS):
        rows.append(-eye[j])
        rhs.append(-lb[j])
        labels.append(f"torque lower joint {j}")

    k = len(cmap.stance_legs)
    facet_names = [f"cone facet {f}" for f in range(pyramid.facets)] + ["unilateral"]
    for idx, leg in enumerate(cmap.stance_legs):
        eta_i = cmap.eta[3 * idx: 3 * idx + 3]
        G_i = cmap.G[3 * idx: 3 * idx + 3]
        # pyramid.A @ lambda_i <= 0 with lambda_i = eta_i - G_i tau_c
        rows.append(-pyramid.A @ G_i)
        rhs.append(-pyramid.A @ eta_i)
        labels.extend(f"leg {leg} {name}" for name in facet_names)

    G = np.vstack([np.atleast_2d(r) for r in rows])
    h = np.concatenate([np.atleast_1d(r) for r in rhs])
    return G, h, labels


def solve_constraint_qp(cmap: ContactForceMap, tau_min: np.ndarray,
                        tau_max: np.ndarray, tau_m: np.ndarray,
                        pyramid: FrictionPyramid,
                        seed_active=()) -> QpSolution:
    """Minimum-norm tau_c keeping contacts in their pyramids and torques in
    bounds; infeasible problems report the most violated constraint."""
    G, h, labels = assemble_constraint_qp(cmap, tau_min, tau_max, tau_m, pyramid)
    return min_norm_qp(G, h, labels=labels, seed_active=seed_active)
