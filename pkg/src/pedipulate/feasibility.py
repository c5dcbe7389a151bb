"""Feasibility boundaries for teleoperation.

Builds, for a quasi-static stance snapshot (zero velocity/acceleration):
  - per-leg contact polytopes: joint torque boxes mapped into contact-force
    space, intersected with the friction pyramid for stance legs,
  - the feasible force polytope (FFP) of the manipulating foot: forces the
    foot can apply to the environment without violating torque limits,
    stance friction cones or torso equilibrium,
  - the CoM support-polygon boundary,
  - the displacement polytope mapping the FFP through the foot stiffness
    (the joystick command bound once in contact).

Sign convention: leg polytopes live in reaction-force space (force on the
foot); the published FFP is mirrored into applied-force space so that a
commanded pressing displacement maps straight into it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Polytope
from .model import (
    ModelError,
    RobotModel,
    RobotState,
    compute_dynamics_terms,
    evaluate_kinematics,
    bias_forces,
    com_position,
    leg_inverse_kinematics,
)
from .qp import FrictionPyramid, linearize_friction


class FeasibilityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# per-leg contact polytopes
# ---------------------------------------------------------------------------

def leg_contact_polytope(J_leg: np.ndarray, d_leg: np.ndarray, tau_min: np.ndarray,
                         tau_max: np.ndarray, pyramid: FrictionPyramid | None = None
                         ) -> Polytope:
    """Feasible contact forces of one leg: the torque box mapped through
    lam = J^-T (d - tau), optionally clipped by the friction pyramid."""
    J_leg = np.asarray(J_leg, dtype=float).reshape(3, 3)
    det = float(np.linalg.det(J_leg))
    if abs(det) < 1e-9:
        raise FeasibilityError(
            f"leg Jacobian is singular (det={det:.2e}): kinematic singularity")
    J_inv_T = np.linalg.inv(J_leg).T
    box = Polytope.box(np.asarray(tau_min, dtype=float), np.asarray(tau_max, dtype=float))
    shift = J_inv_T @ np.asarray(d_leg, dtype=float).reshape(3)
    fcp = geometry.affine_image(box, -J_inv_T, offset=shift)
    if pyramid is not None:
        cone = Polytope.from_halfspaces(pyramid.A, np.zeros(pyramid.A.shape[0]))
        fcp = geometry.intersect(fcp, cone)
    return fcp


# ---------------------------------------------------------------------------
# feasible force polytope
# ---------------------------------------------------------------------------

@dataclass
class FeasibleForcePolytope:
    """Forces (N, world frame, origin at the manipulating foot) the foot can
    apply to the environment from one stance snapshot."""

    polytope: Polytope
    snapshot_id: str
    shrink: float
    facet_normals: np.ndarray          # (r, 3) unit rows
    facet_offsets: np.ndarray          # (r,) max feasible force along each normal

    @property
    def is_empty(self) -> bool:
        return self.polytope.is_empty

    def contains(self, force, tol: float = 1e-8) -> bool:
        return self.polytope.contains(force, tol)

    def support(self, direction) -> float:
        return self.polytope.support(direction)

    def first_crossed_facet(self, force) -> tuple[int, float]:
        """Facet index maximizing the normalized crossing ratio, and the ratio
        (>1 means the force is beyond that facet)."""
        f = np.asarray(force, dtype=float).reshape(3)
        proj = self.facet_normals @ f
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.facet_offsets > 1e-9, proj / self.facet_offsets, -np.inf)
        idx = int(np.argmax(ratio))
        return idx, float(ratio[idx])

    def to_dict(self) -> dict:
        A, b = self.polytope.hrep()
        return {
            "snapshot_id": self.snapshot_id,
            "shrink": self.shrink,
            "halfspaces": {"A": A.tolist(), "b": b.tolist()},
            "vertices": self.polytope.vrep().tolist(),
            "facets": {"normals": self.facet_normals.tolist(),
                       "max_force": self.facet_offsets.tolist()},
        }


def _snapshot_id(model: RobotModel, state: RobotState) -> str:
    payload = model.config_hash() + json.dumps(
        state.flat_q().round(12).tolist())
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def feasible_force_polytope(model: RobotModel, state: RobotState,
                            shrink: float = 1.0, manipulating_leg: int = 0,
                            stance_legs=(1, 2, 3), facets: int = 4
                            ) -> FeasibleForcePolytope:
    """FFP of the manipulating foot for a quasi-static stance snapshot.

    Torque boxes bound each leg's contact force; stance forces are clipped by
    inscribed friction pyramids; the torso equilibrium row couples all legs:
    the manipulating reaction must land in d_b minus the Minkowski sum of the
    stance legs' base-wrench images.  The result is mirrored into
    applied-force space and scaled by `shrink` about the origin.
    """
    if len(stance_legs) != 3:
        raise FeasibilityError("need exactly 3 stance legs and 1 manipulating leg")
    snapshot = RobotState(state.base_pos, state.base_quat, state.q_joints,
                          np.zeros(18))
    terms = compute_dynamics_terms(model, snapshot, stance_legs, manipulating_leg)
    d = bias_forces(model, snapshot, terms.kin)
    d_base = d[0:6]
    pyramid = linearize_friction(model.friction_coeff, facets)

    def leg_slice(leg):
        return slice(6 + 3 * leg, 9 + 3 * leg)

    fcp_manip = leg_contact_polytope(
        terms.leg_joint_blocks[manipulating_leg], d[leg_slice(manipulating_leg)],
        model.tau_min[3 * manipulating_leg: 3 * manipulating_leg + 3],
        model.tau_max[3 * manipulating_leg: 3 * manipulating_leg + 3], None)

    wrench_images = []
    for leg in stance_legs:
        fcp = leg_contact_polytope(
            terms.leg_joint_blocks[leg], d[leg_slice(leg)],
            model.tau_min[3 * leg: 3 * leg + 3],
            model.tau_max[3 * leg: 3 * leg + 3], pyramid)
        if fcp.is_empty:
            raise FeasibilityError(
                f"stance leg {leg} has no feasible contact force (pose infeasible)")
        wrench_images.append(geometry.affine_image(fcp, terms.leg_base_blocks[leg].T))

    stance_sum = wrench_images[0]
    for w in wrench_images[1:]:
        stance_sum = geometry.minkowski_sum(stance_sum, w)
    budget = geometry.affine_image(stance_sum, -np.eye(6), offset=d_base)

    J0b_T = terms.leg_base_blocks[manipulating_leg].T      # (6,3)
    pre = geometry.preimage_halfspaces(budget.with_both_reps(), J0b_T)
    ffp_reaction = geometry.intersect(fcp_manip, pre)
    if ffp_reaction.is_empty:
        raise FeasibilityError(
            "empty feasible force polytope: stance cannot support the pose "
            "(torso equilibrium unreachable within torque/friction limits)")
    ffp_applied = geometry.affine_image(ffp_reaction, -np.eye(3))
    if shrink != 1.0:
        ffp_applied = ffp_applied.with_both_reps().scale(shrink)

    poly = ffp_applied.with_both_reps()
    A, b = poly.hrep()
    return FeasibleForcePolytope(
        polytope=poly,
        snapshot_id=_snapshot_id(model, state),
        shrink=float(shrink),
        facet_normals=A.copy(),
        facet_offsets=b.copy(),
    )


# ---------------------------------------------------------------------------
# direct feasibility LP (diagnosis / binding-constraint prediction)
# ---------------------------------------------------------------------------

def applied_force_feasibility(model: RobotModel, state: RobotState, force,
                              manipulating_leg: int = 0, stance_legs=(1, 2, 3),
                              facets: int = 4):
    """Feasibility of applying `force` with the manipulating foot, by direct
    LP over stance contact forces (torques eliminated through the leg rows).

    Returns (feasible, binding) where binding names the constraint with the
    smallest margin: ("leg", index, "cone facet k" | "unilateral") or
    ("torque", joint_index, "upper" | "lower").  Margins are taken from the
    Chebyshev-like LP that maximizes the worst normalized slack.
    """
    from scipy.optimize import linprog

    f_applied = np.asarray(force, dtype=float).reshape(3)
    snapshot = RobotState(state.base_pos, state.base_quat, state.q_joints, np.zeros(18))
    terms = compute_dynamics_terms(model, snapshot, stance_legs, manipulating_leg)
    d = bias_forces(model, snapshot, terms.kin)
    d_base = d[0:6]
    pyramid = linearize_friction(model.friction_coeff, facets)
    lam0 = -f_applied

    # manipulating-leg torque is fully determined: tau_0 = d_0 - J_00^T lam0
    sl0 = slice(6 + 3 * manipulating_leg, 9 + 3 * manipulating_leg)
    tau0 = d[sl0] - terms.leg_joint_blocks[manipulating_leg].T @ lam0
    lo0 = model.tau_min[3 * manipulating_leg: 3 * manipulating_leg + 3]
    hi0 = model.tau_max[3 * manipulating_leg: 3 * manipulating_leg + 3]

    # unknowns: stacked stance contact forces (9,) plus slack margin t
    rows_A, rows_b, labels = [], [], []
    for i, leg in enumerate(stance_legs):
        sl = slice(6 + 3 * leg, 9 + 3 * leg)
        JT = terms.leg_joint_blocks[leg].T
        for j in range(3):
            row = np.zeros(9)
            row[3 * i: 3 * i + 3] = -JT[j]                 # tau_j = d_j - JT_j lam
            rows_A.append(row)
            rows_b.append(model.tau_max[3 * leg + j] - d[sl][j])
            labels.append(("torque", 3 * leg + j, "upper"))
            rows_A.append(-row)
            rows_b.append(d[sl][j] - model.tau_min[3 * leg + j])
            labels.append(("torque", 3 * leg + j, "lower"))
        for k, prow in enumerate(pyramid.A):
            row = np.zeros(9)
            row[3 * i: 3 * i + 3] = prow
            rows_A.append(row)
            rows_b.append(0.0)
            name = "unilateral" if k == pyramid.facets else f"cone facet {k}"
            labels.append(("leg", leg, name, tuple(prow.tolist())))
    A_ub = np.array(rows_A)
    b_ub = np.array(rows_b)

    A_eq = np.hstack([terms.leg_base_blocks[leg].T for leg in stance_legs])
    b_eq = d_base - terms.leg_base_blocks[manipulating_leg].T @ lam0

    # fixed manipulating-leg torque bounds
    for j in range(3):
        if tau0[j] > hi0[j] + 1e-9:
            return False, ("torque", 3 * manipulating_leg + j, "upper")
        if tau0[j] < lo0[j] - 1e-9:
            return False, ("torque", 3 * manipulating_leg + j, "lower")

    # maximize worst slack: A x + t <= b, max t
    n = 9
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_lp = np.hstack([A_ub, np.ones((A_ub.shape[0], 1))])
    A_eq_lp = np.hstack([A_eq, np.zeros((6, 1))])
    res = linprog(c, A_ub=A_lp, b_ub=b_ub, A_eq=A_eq_lp, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(None, None)], method="highs")
    if res.status != 0:
        return False, ("equilibrium", -1, "no stance force balances the torso")
    t = float(res.x[-1])
    lam = res.x[:9]
    slacks = b_ub - A_ub @ lam
    binding = labels[int(np.argmin(slacks))]
    return t >= -1e-9, binding


# ---------------------------------------------------------------------------
# CoM support boundary
# ---------------------------------------------------------------------------

@dataclass
class ComBoundary:
    """Support polygon of the stance feet and its shrunk safety version."""

    polygon: np.ndarray                # (n,2) ccw vertices
    shrunk: np.ndarray                 # (n,2)
    shrink: float
    centroid: np.ndarray               # (2,)
    com_xy: np.ndarray                 # (2,)

    def margin(self, point=None) -> float:
        p = self.com_xy if point is None else np.asarray(point, dtype=float).reshape(2)
        return polygon_margin(self.shrunk, p)


def _polygon_ccw(points: np.ndarray) -> np.ndarray:
    c = points.mean(axis=0)
    ang = np.arctan2(points[:, 1] - c[1], points[:, 0] - c[0])
    return points[np.argsort(ang)]


def _polygon_area_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    if abs(area) < 1e-12:
        return poly.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def polygon_margin(poly: np.ndarray, p: np.ndarray) -> float:
    """Min over edges of the signed point-line distance (positive inside)."""
    margins = []
    n = poly.shape[0]
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        edge = b - a
        normal = np.array([edge[1], -edge[0]])   # outward for ccw polygons
        normal /= np.linalg.norm(normal)
        margins.append(-(normal @ (p - a)))
    return float(min(margins))


def com_boundary(model: RobotModel, state: RobotState, shrink: float = 0.8,
                 stance_legs=(1, 2, 3)) -> ComBoundary:
    """Support polygon of the stance ground projections, shrunk about its
    area centroid; the CoM margin is distance to the shrunk boundary."""
    if len(stance_legs) < 3:
        raise FeasibilityError("need at least 3 stance feet for a support polygon")
    kin = evaluate_kinematics(model, state)
    pts = np.array([kin.foot_pos[leg][0:2] for leg in stance_legs])
    hull = geometry.hull_vertices(pts)
    if hull.shape[0] < 3:
        raise FeasibilityError("stance feet are collinear: degenerate support polygon")
    poly = _polygon_ccw(hull)
    centroid = _polygon_area_centroid(poly)
    shrunk = centroid + shrink * (poly - centroid)
    com = com_position(model, state, kin)
    return ComBoundary(polygon=poly, shrunk=shrunk, shrink=float(shrink),
                       centroid=centroid, com_xy=com[0:2])


def com_margin(boundary: ComBoundary, com=None) -> float:
    return boundary.margin(com)


# ---------------------------------------------------------------------------
# displacement polytope
# ---------------------------------------------------------------------------

def displacement_polytope(ffp: FeasibleForcePolytope | Polytope,
                          stiffness_diag) -> Polytope:
    """Joystick displacement bound beyond contact: {dx : K dx in FFP}."""
    poly = ffp.polytope if isinstance(ffp, FeasibleForcePolytope) else ffp
    K = np.asarray(stiffness_diag, dtype=float).reshape(-1)[0:3]
    if np.any(K <= 0):
        raise FeasibilityError("translational stiffness must be positive")
    if poly.is_empty:
        return Polytope.empty(3)
    return geometry.preimage_halfspaces(poly, np.diag(K))


# ---------------------------------------------------------------------------
# offline grid
# ---------------------------------------------------------------------------

GRID_FORMAT_VERSION = 1


@dataclass
class GridSpec:
    center: np.ndarray                 # (3,) world, manipulating-foot workspace
    half_extents: np.ndarray           # (3,)
    shape: tuple = (5, 5, 5)

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        self.shape = tuple(int(s) for s in self.shape)
        if any(s < 1 for s in self.shape):
            raise FeasibilityError("grid shape entries must be >= 1")

    def nodes(self) -> np.ndarray:
        axes = [
            np.linspace(c - h, c + h, s) if s > 1 else np.array([c])
            for c, h, s in zip(self.center, self.half_extents, self.shape)
        ]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return pts.reshape(-1, 3)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(),
                "half_extents": self.half_extents.tolist(),
                "shape": list(self.shape)}


@dataclass
class FfpGrid:
    """Precomputed FFP lookup over the manipulating-foot workspace."""

    model_hash: str
    spec: GridSpec
    node_positions: np.ndarray         # (n,3)
    entries: list                      # FeasibleForcePolytope | None per node
    shrink: float

    def query(self, foot_position) -> FeasibleForcePolytope:
        """Nearest-node lookup (Euclidean, ties by lowest index)."""
        p = np.asarray(foot_position, dtype=float).reshape(3)
        d2 = np.sum((self.node_positions - p) ** 2, axis=1)
        idx = int(np.argmin(d2))       # argmin returns the lowest tied index
        entry = self.entries[idx]
        if entry is None:
            raise FeasibilityError(f"grid node {idx} is statically infeasible")
        return entry

    def to_json(self) -> str:
        nodes = []
        for idx, entry in enumerate(self.entries):
            nodes.append({
                "index": idx,
                "position": self.node_positions[idx].tolist(),
                "feasible": entry is not None,
                "ffp": entry.to_dict() if entry is not None else None,
            })
        return json.dumps({
            "format_version": GRID_FORMAT_VERSION,
            "model_hash": self.model_hash,
            "grid": self.spec.to_dict(),
            "shrink": self.shrink,
            "nodes": nodes,
        }, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "FfpGrid":
        data = json.loads(text)
        if data.get("format_version") != GRID_FORMAT_VERSION:
            raise FeasibilityError(
                f"unsupported grid format version {data.get('format_version')}")
        spec = GridSpec(**data["grid"])
        positions = []
        entries = []
        for node in data["nodes"]:
            positions.append(node["position"])
            if node["feasible"]:
                ffp = node["ffp"]
                A = np.array(ffp["halfspaces"]["A"])
                b = np.array(ffp["halfspaces"]["b"])
                # bit-exact reconstruction: rows were stored normalized
                poly = Polytope(dim=A.shape[1], A=A, b=b,
                                vertices=np.array(ffp["vertices"]),
                                authoritative="h")
                entries.append(FeasibleForcePolytope(
                    polytope=poly,
                    snapshot_id=ffp["snapshot_id"],
                    shrink=ffp["shrink"],
                    facet_normals=np.array(ffp["facets"]["normals"]),
                    facet_offsets=np.array(ffp["facets"]["max_force"]),
                ))
            else:
                entries.append(None)
        return FfpGrid(model_hash=data["model_hash"], spec=spec,
                       node_positions=np.array(positions), entries=entries,
                       shrink=float(data["shrink"]))


def ffp_grid(model: RobotModel, state: RobotState, spec: GridSpec,
             shrink: float = 1.0, manipulating_leg: int = 0,
             stance_legs=(1, 2, 3)) -> FfpGrid:
    """Precompute the FFP at every grid node (manipulating-foot IK per node);
    nodes out of reach or statically infeasible are marked infeasible."""
    positions = spec.nodes()
    entries = []
    for p in positions:
        try:
            q_leg = leg_inverse_kinematics(
                model, manipulating_leg, p - state.base_pos)
            qj = state.q_joints.copy()
            qj[3 * manipulating_leg: 3 * manipulating_leg + 3] = q_leg
            node_state = RobotState(state.base_pos, state.base_quat, qj)
            entries.append(feasible_force_polytope(
                model, node_state, shrink, manipulating_leg, stance_legs))
        except (FeasibilityError, ModelError):
            entries.append(None)
    return FfpGrid(model_hash=model.config_hash(), spec=spec,
                   node_positions=positions, entries=entries, shrink=float(shrink))
