import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import double_pendulum, point_mass
from sepsim.multibody import (
    ConstraintSet,
    GroundContact,
    Joint,
    LinkParams,
    ModelError,
    RankDeficiencyError,
    RobotModel,
    SocketFixed,
    bias_forces,
    constrained_dynamics,
    constraint_data,
    constraint_wrench,
    coriolis_matrix,
    energy,
    forward_dynamics,
    forward_dynamics_kkt,
    forward_kinematics,
    frame_jacobian,
    frame_kinematics,
    gravity_vector,
    mass_matrix,
    model_from_dict,
    model_to_dict,
    project_to_manifold,
    rot2,
)

angles = st.floats(-3.0, 3.0)


def states(n):
    return st.tuples(st.lists(angles, min_size=n, max_size=n), st.lists(st.floats(-2.0, 2.0), min_size=n, max_size=n)).map(
        lambda t: (np.array(t[0]), np.array(t[1]))
    )


def unit_chain(k=3):
    links = [("base", LinkParams(1.0, 1.0, 0.5, 0.1))]
    joints = [Joint("B", "planar-base")]
    for i in range(1, k):
        links.append((f"l{i}", LinkParams(1.0, 1.0, 0.5, 0.1)))
        joints.append(Joint(f"j{i}", "revolute", links[i - 1][0]))
    return RobotModel(links, joints, [])


# -- mass matrix ---------------------------------------------------------------


def test_point_mass_translational_block():
    m = point_mass(mass=3.7)
    D = mass_matrix(m, np.zeros(3))
    assert D[0, 0] == pytest.approx(3.7)
    assert D[1, 1] == pytest.approx(3.7)
    assert D[0, 1] == pytest.approx(0.0)


def test_mass_matrix_is_hessian_of_kinetic_energy(rng):
    model = double_pendulum()
    for _ in range(10):
        q = rng.uniform(-2, 2, model.n)
        D = mass_matrix(model, q)
        h = 1e-3
        fd = np.empty_like(D)
        for i in range(model.n):
            for j in range(model.n):
                ei, ej = np.eye(model.n)[i] * h, np.eye(model.n)[j] * h
                T = lambda v: energy(model, q, v)[0]  # noqa: E731
                fd[i, j] = (T(ei + ej) - T(ei - ej) - T(-ei + ej) + T(-ei - ej)) / (4 * h * h)
        assert np.abs(fd - D).max() <= 1e-6 * (1 + np.abs(D).max())


@given(states(5))
def test_mass_matrix_spd(s):
    q, _ = s
    D = mass_matrix(double_pendulum(), q)
    assert np.allclose(D, D.T)
    assert np.linalg.eigvalsh(D).min() > 0


@given(st.lists(angles, min_size=12, max_size=12))
def test_amputee_mass_matrix_spd(model1, q):
    D = mass_matrix(model1.full, np.array(q))
    assert np.linalg.eigvalsh(D).min() > 0


# -- bias, gravity, Coriolis -------------------------------------------------------


def test_zero_velocity_bias_is_gravity(rng):
    model = double_pendulum()
    q = rng.uniform(-1, 1, model.n)
    assert np.allclose(bias_forces(model, q, np.zeros(model.n)), gravity_vector(model, q), atol=1e-14)


def test_zero_gravity_static_bias_vanishes(rng):
    model = double_pendulum(gravity=0.0)
    assert np.allclose(bias_forces(model, rng.uniform(-1, 1, model.n), np.zeros(model.n)), 0.0)


def test_gravity_is_potential_gradient(rng):
    model = double_pendulum()
    q = rng.uniform(-2, 2, model.n)
    h = 1e-6
    fd = np.array([(energy(model, q + h * e, 0 * q)[1] - energy(model, q - h * e, 0 * q)[1]) / (2 * h) for e in np.eye(model.n)])
    assert np.allclose(gravity_vector(model, q), fd, atol=1e-6)


@given(states(5))
def test_ddot_minus_2c_skew(s):
    model = double_pendulum()
    q, qd = s
    h = 1e-6
    Ddot = (mass_matrix(model, q + h * qd) - mass_matrix(model, q - h * qd)) / (2 * h)
    N = Ddot - 2 * coriolis_matrix(model, q, qd)
    assert np.abs(N + N.T).max() <= 1e-6 * (1 + np.abs(Ddot).max())


def test_coriolis_consistent_with_bias(rng):
    model = double_pendulum()
    q, qd = rng.uniform(-1, 1, model.n), rng.uniform(-1, 1, model.n)
    C = coriolis_matrix(model, q, qd)
    assert np.allclose(C @ qd + gravity_vector(model, q), bias_forces(model, q, qd), atol=1e-12)


def test_energy_conservation_double_pendulum():
    model = double_pendulum()
    cons = ConstraintSet([GroundContact("base")])
    q0 = np.array([0.0, 0.0, 0.0, 1.2, -0.7])
    qd0 = np.array([0.0, 0.0, 0.0, 0.5, -1.0])

    def rhs(t, x):
        return np.concatenate([x[5:], forward_dynamics(model, cons, x[:5], x[5:], np.zeros(2))])

    sol = solve_ivp(rhs, (0, 5), np.concatenate([q0, qd0]), method="DOP853", rtol=1e-10, atol=1e-12)
    E = [sum(energy(model, x[:5], x[5:])) for x in sol.y.T]
    assert abs(E[-1] - E[0]) / abs(E[0]) <= 1e-6


def test_energy_conservation_free_floating():
    model = double_pendulum(gravity=0.0)
    x0 = np.array([0.1, 0.2, 0.3, 0.4, -0.5, 0.3, -0.2, 1.0, 0.8, -1.2])

    def rhs(t, x):
        return np.concatenate([x[5:], forward_dynamics(model, ConstraintSet(), x[:5], x[5:], np.zeros(2))])

    sol = solve_ivp(rhs, (0, 5), x0, method="DOP853", rtol=1e-10, atol=1e-12)
    E = [energy(model, x[:5], x[5:])[0] for x in sol.y.T]
    assert abs(E[-1] - E[0]) / abs(E[0]) <= 1e-6


# -- kinematics ------------------------------------------------------------------------


def test_zero_pose_frames_hang_down():
    model = unit_chain(3)
    q = np.zeros(model.n)
    for k, name in enumerate(["base", "l1", "l2"]):
        assert np.allclose(forward_kinematics(model, name, q), [0.0, -k, 0.0], atol=1e-15)
    assert np.allclose(forward_kinematics(model, "l2_end", q), [0.0, -3.0, 0.0], atol=1e-15)


@given(states(5), st.floats(-5, 5), st.floats(-5, 5))
def test_base_translation_equivariance(s, a, b):
    model = unit_chain(3)
    q, _ = s
    shifted = q.copy()
    shifted[:2] += (a, b)
    for f in ("l1", "l2_end", "base_com"):
        d = forward_kinematics(model, f, shifted) - forward_kinematics(model, f, q)
        assert np.allclose(d, [a, b, 0.0], atol=1e-12)


def homogeneous(x, z, phi):
    T = np.eye(3)
    T[:2, :2] = rot2(phi)
    T[:2, 2] = (x, z)
    return T


def test_base_rotation_matches_homogeneous_transforms(rng):
    model = unit_chain(3)
    for _ in range(10):
        q = rng.uniform(-2, 2, model.n)
        T = homogeneous(*q[:3])
        T = T @ homogeneous(0.0, -1.0, q[3])
        T = T @ homogeneous(0.0, -1.0, q[4])
        end = T @ np.array([0.0, -1.0, 1.0])
        assert np.allclose(forward_kinematics(model, "l2_end", q)[:2], end[:2], atol=1e-12)


def test_frame_jacobian_fd(rng):
    model = double_pendulum()
    for _ in range(20):
        q, d = rng.uniform(-2, 2, model.n), rng.normal(size=model.n)
        h = 1e-6
        for f in ("l2_end", "l1_com", "base"):
            fd = (forward_kinematics(model, f, q + h * d) - forward_kinematics(model, f, q - h * d)) / (2 * h)
            assert np.allclose(frame_jacobian(model, f, q) @ d, fd, atol=1e-6)


def test_jacobian_tree_structure(model1):
    full = model1.full
    q = np.random.default_rng(0).uniform(-0.5, 0.5, full.n)
    J = frame_jacobian(full, "pfoot_end", q)
    for c in ("lh", "lk", "la"):
        assert np.all(J[:, full.coord_index[c]] == 0.0)
    assert np.allclose(J[:2, :2], np.eye(2))


def test_velocity_product_fd(rng):
    model = double_pendulum()
    for _ in range(10):
        q, qd = rng.uniform(-2, 2, model.n), rng.uniform(-1, 1, model.n)
        h = 1e-6
        _, _, _, acc = frame_kinematics(model, "l2_end", q, qd)
        Jp, Jm = frame_jacobian(model, "l2_end", q + h * qd), frame_jacobian(model, "l2_end", q - h * qd)
        assert np.allclose(acc, (Jp - Jm) @ qd / (2 * h), atol=1e-6)


# -- constraints ------------------------------------------------------------------------


def test_constraint_drift_fd(model1, rng):
    full = model1.full
    q, qd = rng.uniform(-0.5, 0.5, full.n), rng.uniform(-1, 1, full.n)
    cons = model1.constraints("pt", q)
    h = 1e-6
    J, Jdq = constraint_data(full, cons, q, qd)
    Jp, _ = constraint_data(full, cons, q + h * qd, qd)
    Jm, _ = constraint_data(full, cons, q - h * qd, qd)
    assert np.allclose(Jdq, (Jp - Jm) @ qd / (2 * h), atol=1e-6)
    _, zero = constraint_data(full, cons, q, np.zeros(full.n))
    assert np.allclose(zero, 0.0)


def test_socket_rows_reduce_to_jacobian_difference(model1, rng):
    """With the parent frame unrotated, the weld rows are J_child - J_parent."""
    full = model1.full
    q = np.zeros(full.n)
    q[full.coord_index["lh"]] = 0.3
    q[full.coord_index["pk"]] = -0.4
    J, _ = constraint_data(full, ConstraintSet([model1.socket_constraint()]), q, np.zeros(full.n))
    diff = frame_jacobian(full, "socket", q) - frame_jacobian(full, "rthigh_end", q)
    assert np.allclose(J, diff, atol=1e-14)


def test_socket_rows_fd(model1, rng):
    full = model1.full
    cons = ConstraintSet([model1.socket_constraint()])
    q, d = rng.uniform(-1, 1, full.n), rng.normal(size=full.n)
    h = 1e-6
    J, _ = constraint_data(full, cons, q, np.zeros(full.n))
    fd = (cons.residual(full, q + h * d) - cons.residual(full, q - h * d)) / (2 * h)
    assert np.allclose(J @ d, fd, atol=1e-6)


def test_static_pinned_point_mass_force():
    m = 2.5
    model = point_mass(mass=m)
    cons = ConstraintSet([GroundContact("p")])
    F, split = constraint_wrench(model, cons, np.zeros(3), np.zeros(3), np.zeros(0))
    assert F[1] == pytest.approx(m * 9.81)
    assert np.allclose(F, split.lam_f)


def test_constrained_accel_satisfies_constraints(model1, rng):
    full = model1.full
    for v in ("pt", "pw"):
        q = rng.uniform(-0.4, 0.4, full.n)
        cons = model1.constraints(v, q)
        qd = rng.uniform(-1, 1, full.n)
        q, qd = project_to_manifold(full, cons, q, qd)
        u = rng.normal(size=full.m)
        qdd = forward_dynamics(full, cons, q, qd, u)
        J, Jdq = constraint_data(full, cons, q, qd)
        assert np.abs(J @ qdd + Jdq).max() <= 1e-8


def test_kkt_matches_substitution(model1, rng):
    full = model1.full
    for _ in range(20):
        q = rng.uniform(-0.4, 0.4, full.n)
        cons = model1.constraints("pt", q)
        qd, u = rng.uniform(-1, 1, full.n), rng.normal(size=full.m)
        qdd_k, F_k = forward_dynamics_kkt(full, cons, q, qd, u)
        cd = constrained_dynamics(full, cons, q, qd)
        assert np.abs(qdd_k - cd.qdd(u)).max() <= 1e-10 * (1 + np.abs(qdd_k).max())
        assert np.abs(F_k - cd.split(u)).max() <= 1e-10 * (1 + np.abs(F_k).max())


def test_free_static_no_gravity_no_accel():
    model = double_pendulum(gravity=0.0)
    assert np.allclose(forward_dynamics(model, ConstraintSet(), np.zeros(5), np.zeros(5), np.zeros(2)), 0.0)


def test_pinned_base_has_zero_base_accel(rng):
    model = double_pendulum()
    cons = ConstraintSet([GroundContact("base")])
    q = np.concatenate([[0, 0, 0], rng.uniform(-1, 1, 2)])
    qdd = forward_dynamics(model, cons, q, np.concatenate([[0, 0, 0], rng.uniform(-1, 1, 2)]), np.zeros(2))
    assert np.allclose(qdd[:3], 0.0, atol=1e-12)


def test_rank_deficiency_detected():
    model = double_pendulum()
    cons = ConstraintSet([GroundContact("base"), GroundContact("base")])
    with pytest.raises(RankDeficiencyError):
        constraint_data(model, cons, np.zeros(5), np.zeros(5))


def test_project_to_manifold(model1, rng):
    full = model1.full
    q = rng.uniform(-0.4, 0.4, full.n)
    cons = model1.constraints("pw", q)
    q[0] += 0.01
    q[full.coord_index["f_x"]] += 0.01
    q2, qd2 = project_to_manifold(full, cons, q, rng.normal(size=full.n))
    J, _ = constraint_data(full, cons, q2, qd2)
    assert np.abs(cons.residual(full, q2)).max() <= 1e-12
    assert np.abs(J @ qd2).max() <= 1e-12


# -- energy, params, I/O -------------------------------------------------------------------


def test_static_kinetic_energy_zero(rng):
    model = double_pendulum()
    assert energy(model, rng.uniform(-1, 1, 5), np.zeros(5))[0] == 0.0


def test_energy_linear_in_mass(rng):
    model = double_pendulum()
    doubled = RobotModel(
        list(zip(model.link_names, [lk.scaled(2.0) for lk in model.links])), model.joints, model.actuation, model.gravity
    )
    q, qd = rng.uniform(-1, 1, 5), rng.uniform(-1, 1, 5)
    assert np.allclose(np.array(energy(doubled, q, qd)), 2 * np.array(energy(model, q, qd)))


def test_model_dict_roundtrip(rng):
    model = double_pendulum()
    again = model_from_dict(model_to_dict(model))
    q = rng.uniform(-1, 1, 5)
    assert np.array_equal(mass_matrix(model, q), mass_matrix(again, q))
    assert np.array_equal(model.B, again.B)


@pytest.mark.parametrize(
    "kwargs",
    [dict(mass=0.0, length=1.0, com_offset=0.5, inertia=0.1), dict(mass=1.0, length=-1.0, com_offset=0.0, inertia=0.1), dict(mass=1.0, length=1.0, com_offset=2.0, inertia=0.1)],
)
def test_bad_link_params(kwargs):
    with pytest.raises(ModelError):
        LinkParams(**kwargs)


def test_bad_model_inputs():
    with pytest.raises(ModelError):
        RobotModel([("a", LinkParams(1, 1, 0.5, 0.1))], [Joint("q", "revolute", "a")], [])
    with pytest.raises(ModelError):
        mass_matrix(double_pendulum(), np.zeros(4))
    with pytest.raises(ModelError):
        model_from_dict({"links": [{"name": "x"}]})
