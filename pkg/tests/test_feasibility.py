import numpy as np
import pytest
from scipy.optimize import linprog

from pedipulate.control import manipulation_stance
from pedipulate.feasibility import (
    ComBoundary,
    FeasibilityError,
    FfpGrid,
    GridSpec,
    applied_force_feasibility,
    com_boundary,
    com_margin,
    displacement_polytope,
    feasible_force_polytope,
    ffp_grid,
    leg_contact_polytope,
    polygon_margin,
)
from pedipulate.geometry import Polytope
from pedipulate.model import (
    RobotState,
    bias_forces,
    compute_dynamics_terms,
    load_model,
)
from pedipulate.qp import linearize_friction


@pytest.fixture(scope="module")
def model():
    return load_model(None)


@pytest.fixture(scope="module")
def stance(model):
    return manipulation_stance(model)


# ---------------------------------------------------------------------------
# independent whole-system LP oracle (direct transcription of the structured
# equations of motion; kept separate from the production LP on purpose)
# ---------------------------------------------------------------------------

def oracle_force_feasible(model, state, f_applied, facets=4):
    """Feasibility of (tau_0..3, lam_1..3) for applying f with foot 0."""
    snapshot = RobotState(state.base_pos, state.base_quat, state.q_joints, np.zeros(18))
    terms = compute_dynamics_terms(model, snapshot)
    d = bias_forces(model, snapshot)
    pyr = linearize_friction(model.friction_coeff, facets)
    lam0 = -np.asarray(f_applied, dtype=float)

    # variables: lam1, lam2, lam3 (9)
    # torque rows give tau_i = d_i - J_ii^T lam_i, bounded by limits
    A_ub, b_ub = [], []
    for i, leg in enumerate((1, 2, 3)):
        JT = terms.leg_joint_blocks[leg].T
        d_i = d[6 + 3 * leg: 9 + 3 * leg]
        for j in range(3):
            row = np.zeros(9)
            row[3 * i: 3 * i + 3] = -JT[j]
            A_ub.append(row.copy())
            b_ub.append(model.tau_max[3 * leg + j] - d_i[j])
            A_ub.append(-row)
            b_ub.append(d_i[j] - model.tau_min[3 * leg + j])
        for prow in pyr.A:
            row = np.zeros(9)
            row[3 * i: 3 * i + 3] = prow
            A_ub.append(row)
            b_ub.append(0.0)

    # manipulating leg torque fixed entirely by f
    tau0 = d[6:9] - terms.leg_joint_blocks[0].T @ lam0
    if np.any(tau0 > model.tau_max[0:3] + 1e-9) or np.any(tau0 < model.tau_min[0:3] - 1e-9):
        return False

    A_eq = np.hstack([terms.leg_base_blocks[leg].T for leg in (1, 2, 3)])
    b_eq = d[0:6] - terms.leg_base_blocks[0].T @ lam0
    res = linprog(np.zeros(9), A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  A_eq=A_eq, b_eq=b_eq, bounds=[(None, None)] * 9,
                  method="highs")
    return res.status == 0


# ---------------------------------------------------------------------------
# leg contact polytopes
# ---------------------------------------------------------------------------

def test_identity_leg_gives_torque_cube():
    fcp = leg_contact_polytope(np.eye(3), np.zeros(3),
                               -np.ones(3) * 7.0, np.ones(3) * 7.0)
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        assert fcp.support(axis) == pytest.approx(7.0, abs=1e-9)


def test_zero_torque_box_single_point():
    d = np.array([1.0, -2.0, 3.0])
    J = np.array([[2.0, 0.1, 0.0], [0.0, 1.5, 0.2], [0.3, 0.0, 1.0]])
    fcp = leg_contact_polytope(J, d, np.zeros(3), np.zeros(3))
    verts = fcp.vrep()
    assert verts.shape[0] == 1
    np.testing.assert_allclose(verts[0], np.linalg.inv(J).T @ d, atol=1e-9)


def test_fcp_vertices_map_back_to_torque_limits(model, stance):
    terms = compute_dynamics_terms(model, stance)
    d = bias_forces(model, RobotState(stance.base_pos, stance.base_quat,
                                      stance.q_joints, np.zeros(18)))
    pyr = linearize_friction(model.friction_coeff, 4)
    for leg in (1, 2, 3):
        J = terms.leg_joint_blocks[leg]
        d_i = d[6 + 3 * leg: 9 + 3 * leg]
        fcp = leg_contact_polytope(J, d_i, model.tau_min[3 * leg: 3 * leg + 3],
                                   model.tau_max[3 * leg: 3 * leg + 3], pyr)
        for lam in fcp.vrep():
            tau = d_i - J.T @ lam
            assert np.all(tau <= model.tau_max[3 * leg: 3 * leg + 3] + 1e-8)
            assert np.all(tau >= model.tau_min[3 * leg: 3 * leg + 3] - 1e-8)


def test_singular_leg_rejected(model):
    with pytest.raises(FeasibilityError, match="singular"):
        leg_contact_polytope(np.diag([1.0, 1.0, 0.0]), np.zeros(3),
                             -np.ones(3), np.ones(3))


# ---------------------------------------------------------------------------
# feasible force polytope
# ---------------------------------------------------------------------------

def test_zero_force_inside_ffp(model, stance):
    ffp = feasible_force_polytope(model, stance)
    assert not ffp.is_empty
    assert ffp.contains(np.zeros(3))
    assert ffp.polytope.membership_margin(np.zeros(3)) < -1e-3  # strictly inside


def test_ffp_membership_matches_lp_oracle(model, stance):
    ffp = feasible_force_polytope(model, stance)
    rng = np.random.default_rng(17)
    scale = float(np.max(np.abs(ffp.polytope.vrep()))) * 1.3
    agree = total = 0
    for _ in range(800):
        f = rng.uniform(-scale, scale, size=3)
        margin = ffp.polytope.membership_margin(f)
        if abs(margin) < 1e-3 * scale:
            continue  # boundary band excluded
        total += 1
        if ffp.contains(f) == oracle_force_feasible(model, stance, f):
            agree += 1
    assert total > 400
    assert agree / total >= 0.99


def test_ffp_shrink_support(model, stance):
    ffp1 = feasible_force_polytope(model, stance, shrink=1.0)
    ffp08 = feasible_force_polytope(model, stance, shrink=0.8)
    rng = np.random.default_rng(3)
    for u in rng.normal(size=(40, 3)):
        assert ffp08.support(u) == pytest.approx(0.8 * ffp1.support(u), rel=1e-9)
    # inclusion
    for v in ffp08.polytope.vrep():
        assert ffp1.contains(v, tol=1e-7)


def test_ffp_production_lp_agrees(model, stance):
    # production diagnosis LP matches the oracle
    rng = np.random.default_rng(29)
    ffp = feasible_force_polytope(model, stance)
    scale = float(np.max(np.abs(ffp.polytope.vrep()))) * 1.2
    for _ in range(100):
        f = rng.uniform(-scale, scale, size=3)
        feasible, _ = applied_force_feasibility(model, stance, f)
        assert feasible == oracle_force_feasible(model, stance, f)


# ---------------------------------------------------------------------------
# CoM boundary
# ---------------------------------------------------------------------------

def test_symmetric_polygon_margin():
    # square support, point at the centroid: margin = shrink * inradius
    square = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    shrunk = 0.8 * square
    assert polygon_margin(shrunk, np.zeros(2)) == pytest.approx(0.8, abs=1e-12)


def test_margin_zero_on_shrunk_edge():
    square = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])
    shrunk = 0.8 * square
    assert polygon_margin(shrunk, [0.8, 0.0]) == pytest.approx(0.0, abs=1e-12)


def test_margin_matches_brute_force(model, stance):
    boundary = com_boundary(model, stance, shrink=0.8)
    rng = np.random.default_rng(7)
    poly = boundary.shrunk
    n = poly.shape[0]
    for _ in range(50):
        p = rng.uniform(-0.4, 0.4, size=2)
        # brute force: min over edges of point-line signed distance
        dists = []
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            e = (b - a) / np.linalg.norm(b - a)
            nrm = np.array([e[1], -e[0]])
            dists.append(-(nrm @ (p - a)))
        assert polygon_margin(poly, p) == pytest.approx(min(dists), abs=1e-12)


def test_com_boundary_structure(model, stance):
    boundary = com_boundary(model, stance, shrink=0.8)
    assert boundary.polygon.shape[0] == 3
    # shrunk polygon strictly inside the original
    for v in boundary.shrunk:
        assert polygon_margin(boundary.polygon, v) > 0
    # the manipulation stance was built to keep the CoM inside
    assert boundary.margin() > 0


def test_collinear_support_rejected(model):
    state = manipulation_stance(model)
    with pytest.raises(FeasibilityError):
        com_boundary(model, state, stance_legs=(1, 2))


# ---------------------------------------------------------------------------
# displacement polytope
# ---------------------------------------------------------------------------

def test_displacement_diagonal_scaling():
    cube = Polytope.box(-25.0 * np.ones(3), 25.0 * np.ones(3))
    d = displacement_polytope(cube, [500.0, 500.0, 500.0])
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        assert d.support(axis) == pytest.approx(0.05, abs=1e-12)


def test_displacement_membership(model, stance):
    ffp = feasible_force_polytope(model, stance)
    K = np.array([500.0, 500.0, 500.0])
    D = displacement_polytope(ffp, K)
    rng = np.random.default_rng(11)
    for _ in range(2000):
        dx = rng.uniform(-0.3, 0.3, size=3)
        if abs(ffp.polytope.membership_margin(K * dx)) < 1e-6:
            continue
        assert D.contains(dx) == ffp.contains(K * dx)


def test_displacement_of_empty_ffp():
    assert displacement_polytope(Polytope.empty(3), [500.0] * 3).is_empty


# ---------------------------------------------------------------------------
# grid precompute
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_grid(model, stance):
    kin_foot = np.array([0.38, 0.2, 0.08])
    spec = GridSpec(center=kin_foot, half_extents=[0.06, 0.06, 0.05],
                    shape=(2, 2, 2))
    return ffp_grid(model, stance, spec)


def test_grid_query_exact_node(small_grid):
    for idx in range(len(small_grid.entries)):
        if small_grid.entries[idx] is None:
            continue
        got = small_grid.query(small_grid.node_positions[idx])
        assert got.snapshot_id == small_grid.entries[idx].snapshot_id


def test_grid_query_nearest_with_tiebreak(small_grid):
    # midpoint between node 0 and node 1 resolves to the lowest index
    p = 0.5 * (small_grid.node_positions[0] + small_grid.node_positions[1])
    got = small_grid.query(p)
    assert got.snapshot_id == small_grid.entries[0].snapshot_id


def test_grid_serialization_deterministic(model, stance, small_grid):
    text1 = small_grid.to_json()
    spec = GridSpec(center=[0.38, 0.2, 0.08], half_extents=[0.06, 0.06, 0.05],
                    shape=(2, 2, 2))
    again = ffp_grid(model, stance, spec)
    assert again.to_json() == text1
    # round trip preserves content
    back = FfpGrid.from_json(text1)
    assert back.to_json() == text1


def test_grid_marks_unreachable_nodes(model, stance):
    spec = GridSpec(center=[1.5, 0.2, 0.0], half_extents=[0.01, 0.01, 0.01],
                    shape=(1, 1, 1))
    grid = ffp_grid(model, stance, spec)
    assert grid.entries[0] is None
    with pytest.raises(FeasibilityError, match="infeasible"):
        grid.query([1.5, 0.2, 0.0])
