import numpy as np
import pytest

from pedipulate.model import NV, RobotState, compute_dynamics_terms, integrate_state, load_model
from pedipulate.projection import (
    ProjectionError,
    compute_projection,
    constrained_inertia,
    dyn_consistent_null,
    null_projector,
    projector_rate,
)
from pedipulate import maths

RNG = np.random.default_rng(11)


def random_terms(model, rng=RNG, speed=1.0):
    quat = maths.quat_normalize(rng.normal(size=4))
    state = RobotState(rng.normal(scale=0.2, size=3), quat,
                       rng.uniform(-1.0, 1.0, size=12),
                       rng.normal(scale=speed, size=NV))
    return state, compute_dynamics_terms(model, state)


@pytest.fixture(scope="module")
def model():
    return load_model(None)


def test_axis_aligned_projector():
    J_c = np.eye(18)[:9]
    P = null_projector(J_c)
    expected = np.diag([0.0] * 9 + [1.0] * 9)
    np.testing.assert_allclose(P, expected, atol=1e-12)


def test_zero_contact_projector_is_identity():
    assert np.allclose(null_projector(np.zeros((3, 18))), np.eye(18))


def test_projector_identities_random_matrix():
    for _ in range(20):
        J_c = RNG.normal(size=(9, 18))
        P = null_projector(J_c)
        np.testing.assert_allclose(P @ P, P, atol=1e-10)
        np.testing.assert_allclose(P @ J_c.T, 0.0, atol=1e-10)
        np.testing.assert_allclose(P, P.T, atol=1e-12)


def test_projector_identities_robot(model):
    for _ in range(50):
        _, terms = random_terms(model)
        P = null_projector(terms.J_c)
        assert np.linalg.norm(P @ P - P, "fro") < 1e-9
        assert np.linalg.norm(P @ terms.J_c.T, "fro") < 1e-9
        assert np.linalg.norm(P - P.T, "fro") < 1e-9


def test_projector_rate_static_stance():
    J_c = RNG.normal(size=(6, 18))
    P = null_projector(J_c)
    np.testing.assert_allclose(projector_rate(J_c, np.zeros_like(J_c), P), 0.0, atol=1e-14)


def test_projector_rate_is_symmetric(model):
    _, terms = random_terms(model)
    P = null_projector(terms.J_c)
    Pdot = projector_rate(terms.J_c, terms.Jdot_c, P)
    np.testing.assert_allclose(Pdot, Pdot.T, atol=1e-12)


def test_projector_rate_matches_finite_difference(model):
    for _ in range(5):
        state, terms = random_terms(model, speed=0.5)
        P = null_projector(terms.J_c)
        Pdot = projector_rate(terms.J_c, terms.Jdot_c, P)
        dt = 1e-6
        from pedipulate.model import contact_jacobian
        P_plus = null_projector(contact_jacobian(
            model, integrate_state(state, state.velocity, 0.5 * dt), (1, 2, 3)))
        P_minus = null_projector(contact_jacobian(
            model, integrate_state(state, state.velocity, -0.5 * dt), (1, 2, 3)))
        Pdot_fd = (P_plus - P_minus) / dt
        np.testing.assert_allclose(Pdot, Pdot_fd, atol=1e-5)


def test_constrained_inertia_limits(model):
    _, terms = random_terms(model)
    M_c, _ = constrained_inertia(terms.M, np.eye(18))
    np.testing.assert_allclose(M_c, terms.M)
    M_c, _ = constrained_inertia(terms.M, np.zeros((18, 18)))
    np.testing.assert_allclose(M_c, np.eye(18))


def test_constrained_inertia_identity(model):
    # P M M_c^-1 P = P
    for _ in range(10):
        _, terms = random_terms(model)
        P = null_projector(terms.J_c)
        M_c, cond = constrained_inertia(terms.M, P)
        assert cond < 1e12
        lhs = P @ terms.M @ np.linalg.solve(M_c, P)
        np.testing.assert_allclose(lhs, P, atol=1e-8)


def test_dyn_consistent_null_property(model):
    for _ in range(10):
        _, terms = random_terms(model)
        P = null_projector(terms.J_c)
        M_c, _ = constrained_inertia(terms.M, P)
        N_s = dyn_consistent_null(terms.J_s, M_c, P)
        task_map = terms.J_s @ np.linalg.solve(M_c, P)
        assert np.linalg.norm(task_map @ N_s, "fro") < 1e-8
        # idempotent under the induced metric
        np.testing.assert_allclose(N_s @ N_s, N_s, atol=1e-8)


def test_base_wrench_filtered_out_of_foot_task(model):
    _, terms = random_terms(model)
    proj = compute_projection(terms.J_c, terms.Jdot_c, terms.M, terms.J_s)
    task_map = terms.J_s @ np.linalg.solve(proj.M_c, proj.P)
    for _ in range(100):
        F_b = RNG.normal(size=6)
        acc = task_map @ proj.N_s @ terms.J_b.T @ F_b
        assert np.linalg.norm(acc) < 1e-8


def test_motion_constraint_partition(model):
    # P-space dynamics plus (I-P)-space dynamics reassemble the full dynamics
    _, terms = random_terms(model)
    P = null_projector(terms.J_c)
    qdd = RNG.normal(size=18)
    full = terms.M @ qdd + terms.h
    part = P @ (terms.M @ qdd) + P @ terms.h \
        + (np.eye(18) - P) @ (terms.M @ qdd + terms.h)
    np.testing.assert_allclose(part, full, atol=1e-10)


def test_empty_task_rejected(model):
    _, terms = random_terms(model)
    P = null_projector(terms.J_c)
    M_c, _ = constrained_inertia(terms.M, P)
    with pytest.raises(ProjectionError):
        dyn_consistent_null(np.zeros((0, 18)), M_c, P)


def test_singular_task_rejected(model):
    _, terms = random_terms(model)
    P = null_projector(terms.J_c)
    M_c, _ = constrained_inertia(terms.M, P)
    # a task identical to a constraint row is fully inside the constraint space
    J_bad = terms.J_c[:3]
    with pytest.raises(ProjectionError, match="singular"):
        dyn_consistent_null(J_bad, M_c, P)
