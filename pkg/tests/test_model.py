import numpy as np
import pytest

from pedipulate import maths
from pedipulate.model import (
    NV,
    ModelError,
    RobotState,
    bias_forces,
    com_position,
    compute_dynamics_terms,
    contact_jacobian,
    evaluate_kinematics,
    forward_kinematics,
    frame_jacobian,
    gravity_forces,
    inertial_split,
    integrate_state,
    inverse_dynamics,
    leg_inverse_kinematics,
    load_model,
    mass_matrix,
    selection_matrix,
)

RNG = np.random.default_rng(7)


def random_state(rng=RNG, speed=1.0):
    quat = maths.quat_normalize(rng.normal(size=4))
    return RobotState(
        base_pos=rng.normal(scale=0.3, size=3),
        base_quat=quat,
        q_joints=rng.uniform(-1.2, 1.2, size=12),
        velocity=rng.normal(scale=speed, size=NV),
    )


@pytest.fixture(scope="module")
def model():
    return load_model(None)


# ---------------------------------------------------------------------------
# load_model
# ---------------------------------------------------------------------------

def test_default_model_loads(model):
    assert model.tau_min.shape == (12,)
    assert model.hip_offsets.shape == (4, 3)
    assert model.friction_coeff == 0.6
    assert model.total_mass == pytest.approx(32.0)


def test_load_model_rejects_bad_torque_limits():
    cfg = {"tau_min": [-40.0] * 12, "tau_max": [40.0] * 12}
    cfg["tau_min"][3] = 50.0
    with pytest.raises(ModelError, match="joint 3"):
        load_model(cfg)


def test_load_model_rejects_wrong_leg_count():
    with pytest.raises(ModelError, match="4 legs"):
        load_model({"legs": 3})


def test_load_model_yaml_text():
    m = load_model("base_mass: 25.0\nfriction_coeff: 0.5\n")
    assert m.base_mass == 25.0
    assert m.friction_coeff == 0.5


def test_load_model_rejects_unknown_field():
    with pytest.raises(ModelError, match="unknown"):
        load_model({"base_masss": 20.0})


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

def test_zero_configuration_feet(model):
    state = RobotState(np.zeros(3), [1, 0, 0, 0], np.zeros(12))
    frames = forward_kinematics(model, state)
    for leg in range(4):
        expected = model.hip_offsets[leg] + [0.0, 0.0, -model.leg_length]
        np.testing.assert_allclose(frames[f"foot{leg}"][1], expected, atol=1e-14)


def test_translation_equivariance(model):
    state = random_state()
    shifted = RobotState(state.base_pos + [1.0, 0.0, 0.0], state.base_quat,
                         state.q_joints, state.velocity)
    f0 = forward_kinematics(model, state)
    f1 = forward_kinematics(model, shifted)
    for name in f0:
        np.testing.assert_allclose(f1[name][1], f0[name][1] + [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(f1[name][0], f0[name][0], atol=1e-14)


def _chain_transform_oracle(model, state, leg):
    """Independent FK: explicit homogeneous-transform composition."""
    def homog(R, p):
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = p
        return T

    q1, q2, q3 = state.q_joints[3 * leg: 3 * leg + 3]
    T = homog(state.base_rot, state.base_pos)
    T = T @ homog(np.eye(3), model.hip_offsets[leg])
    T = T @ homog(maths.rot_x(q1), np.zeros(3))
    T = T @ homog(maths.rot_y(q2), np.zeros(3))
    T = T @ homog(np.eye(3), [0, 0, -model.thigh_length])
    T = T @ homog(maths.rot_y(q3), np.zeros(3))
    T = T @ homog(np.eye(3), [0, 0, -model.shank_length])
    return T[:3, :3], T[:3, 3]


def test_fk_matches_transform_oracle(model):
    for _ in range(20):
        state = random_state()
        frames = forward_kinematics(model, state)
        for leg in range(4):
            R, p = _chain_transform_oracle(model, state, leg)
            np.testing.assert_allclose(frames[f"foot{leg}"][1], p, atol=1e-12)
            np.testing.assert_allclose(frames[f"foot{leg}"][0], R, atol=1e-12)


def test_foot_frame_z_is_shank_axis(model):
    state = random_state()
    kin = evaluate_kinematics(model, state)
    for leg in range(4):
        shank_axis = kin.joint_pos[leg, 2] - kin.foot_pos[leg]
        shank_axis /= np.linalg.norm(shank_axis)
        np.testing.assert_allclose(kin.foot_rot[leg][:, 2], shank_axis, atol=1e-12)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def _fd_task_velocity(model, state, frame, rows, dt=1e-6):
    """Finite-difference task velocity for the frame_jacobian convention."""
    s0 = integrate_state(state, state.velocity, -0.5 * dt)
    s1 = integrate_state(state, state.velocity, 0.5 * dt)
    f0 = forward_kinematics(model, s0)[frame]
    f1 = forward_kinematics(model, s1)[frame]
    v_lin = (f1[1] - f0[1]) / dt
    w_world = maths.rot_log(f1[0] @ f0[0].T) / dt
    if rows == 3:
        return v_lin
    if rows == 6:
        return np.concatenate([v_lin, w_world])
    R = forward_kinematics(model, state)[frame][0]
    return np.concatenate([v_lin, (R.T @ w_world)[0:2]])


@pytest.mark.parametrize("frame,rows", [
    ("base", 6), ("foot0", 3), ("foot0", 5), ("foot0", 6), ("foot2", 6),
])
def test_jacobian_matches_finite_difference(model, frame, rows):
    for _ in range(10):
        state = random_state()
        J = frame_jacobian(model, state, frame, rows)
        v_fd = _fd_task_velocity(model, state, frame, rows)
        np.testing.assert_allclose(J @ state.velocity, v_fd, rtol=1e-6, atol=1e-6)


def test_base_jacobian_identity_block(model):
    state = RobotState([0.3, -0.2, 0.5], [1, 0, 0, 0], RNG.uniform(-1, 1, 12))
    J_b = frame_jacobian(model, state, "base", 6)
    np.testing.assert_allclose(J_b[:, :6], np.eye(6), atol=1e-14)
    np.testing.assert_allclose(J_b[:, 6:], 0.0, atol=1e-14)


def test_contact_jacobian_rows(model):
    state = random_state()
    J_c = contact_jacobian(model, state, (1, 2, 3))
    assert J_c.shape == (9, 18)


def test_unknown_frame_raises(model):
    with pytest.raises(ModelError, match="unknown frame"):
        frame_jacobian(model, random_state(), "hand", 6)


def test_five_row_jacobian_in_six_row_span(model):
    state = random_state()
    J5 = frame_jacobian(model, state, "foot0", 5)
    J6 = frame_jacobian(model, state, "foot0", 6)
    # each 5-row task row must be a linear combination of the 6 task rows
    coeff, *_ = np.linalg.lstsq(J6.T, J5.T, rcond=None)
    np.testing.assert_allclose(J6.T @ coeff, J5.T, atol=1e-9)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def test_mass_matrix_spd(model):
    for _ in range(25):
        M = mass_matrix(model, random_state())
        np.testing.assert_allclose(M, M.T, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() > 1e-9


def test_mass_matrix_matches_inverse_dynamics_columns(model):
    for _ in range(10):
        state = random_state()
        M = mass_matrix(model, state)
        still = RobotState(state.base_pos, state.base_quat, state.q_joints, np.zeros(NV))
        g = inverse_dynamics(model, still, np.zeros(NV))
        M_id = np.column_stack([
            inverse_dynamics(model, still, e) - g for e in np.eye(NV)
        ])
        np.testing.assert_allclose(M, M_id, atol=1e-10)


def test_static_bias_is_gravity_only(model):
    state = RobotState([0, 0, 0.45], [1, 0, 0, 0], RNG.uniform(-1, 1, 12), np.zeros(NV))
    h = bias_forces(model, state)
    assert h[2] == pytest.approx(model.total_mass * 9.81, rel=1e-12)
    np.testing.assert_allclose(h[0:2], 0.0, atol=1e-10)


def test_power_balance_identity(model):
    # 0.5 u' Mdot u = u' (h - g) must hold for the quasi-velocity dynamics
    for _ in range(10):
        state = random_state()
        u = state.velocity
        eps = 1e-6
        M_plus = mass_matrix(model, integrate_state(state, u, eps))
        M_minus = mass_matrix(model, integrate_state(state, u, -eps))
        Mdot = (M_plus - M_minus) / (2 * eps)
        coriolis = bias_forces(model, state) - gravity_forces(model, state)
        residual = 0.5 * u @ Mdot @ u - u @ coriolis
        assert abs(residual) < 1e-6 * max(1.0, abs(0.5 * u @ Mdot @ u))


def test_selection_matrix_structure():
    B = selection_matrix()
    np.testing.assert_allclose(B @ B, B, atol=0)
    np.testing.assert_allclose(B[:6, :], 0.0)
    np.testing.assert_allclose(B[6:, 6:], np.eye(12))


def test_inertial_split_partition(model):
    for _ in range(5):
        state = random_state()
        qdd = RNG.normal(size=NV)
        split = inertial_split(model, state, qdd)
        d = mass_matrix(model, state) @ qdd + bias_forces(model, state)
        np.testing.assert_allclose(split.reassemble(), d, atol=1e-10)


def test_inertial_split_static_gravity(model):
    state = RobotState([0, 0, 0.45], [1, 0, 0, 0], np.zeros(12), np.zeros(NV))
    split = inertial_split(model, state, np.zeros(NV))
    g = gravity_forces(model, state)
    np.testing.assert_allclose(split.d_base, g[0:6], atol=1e-12)
    np.testing.assert_allclose(split.d_legs.reshape(-1), g[6:], atol=1e-12)


def test_com_position_weighted_average(model):
    state = RobotState(np.zeros(3), [1, 0, 0, 0], np.zeros(12))
    com = com_position(model, state)
    assert com[0] == pytest.approx(0.0, abs=1e-12)
    assert com[2] < 0.0  # legs hang below the base


# ---------------------------------------------------------------------------
# inverse kinematics round trip
# ---------------------------------------------------------------------------

def test_leg_ik_round_trip(model):
    rng = np.random.default_rng(3)
    for _ in range(50):
        q = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-1.2, 1.2), rng.uniform(-2.2, -0.2)])
        state = RobotState(np.zeros(3), [1, 0, 0, 0], np.concatenate([q, np.zeros(9)]))
        foot = forward_kinematics(model, state)["foot0"][1]
        q_ik = leg_inverse_kinematics(model, 0, foot)
        state2 = RobotState(np.zeros(3), [1, 0, 0, 0], np.concatenate([q_ik, np.zeros(9)]))
        foot2 = forward_kinematics(model, state2)["foot0"][1]
        np.testing.assert_allclose(foot2, foot, atol=1e-9)


def test_leg_ik_out_of_reach(model):
    with pytest.raises(ModelError, match="out of reach"):
        leg_inverse_kinematics(model, 0, model.hip_offsets[0] + [0.0, 0.0, -0.9])


# ---------------------------------------------------------------------------
# dynamics terms aggregate
# ---------------------------------------------------------------------------

def test_dynamics_terms_shapes(model):
    terms = compute_dynamics_terms(model, random_state())
    assert terms.J_c.shape == (9, 18)
    assert terms.J_s.shape == (5, 18)
    assert terms.J_b.shape == (6, 18)
    assert terms.leg_joint_blocks.shape == (4, 3, 3)
    assert terms.leg_base_blocks.shape == (4, 3, 6)
    # leg blocks are the column partition of the foot position Jacobian
    for leg in range(4):
        J_foot = frame_jacobian(model, RobotState(
            terms.kin.base_pos, RNG.normal(size=4) * 0 + [1, 0, 0, 0], np.zeros(12)),
            f"foot{leg}", 3)
    # consistency: stacked contact rows equal per-leg blocks
    state = random_state()
    terms = compute_dynamics_terms(model, state, stance_legs=(1, 2, 3))
    for idx, leg in enumerate((1, 2, 3)):
        np.testing.assert_allclose(
            terms.J_c[3 * idx: 3 * idx + 3, 6 + 3 * leg: 9 + 3 * leg],
            terms.leg_joint_blocks[leg], atol=1e-14)
        np.testing.assert_allclose(
            terms.J_c[3 * idx: 3 * idx + 3, 0:6],
            terms.leg_base_blocks[leg], atol=1e-14)
