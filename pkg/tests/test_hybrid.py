"""Domain integration, impacts, traces, Poincare residuals and subsystem replay."""

import numpy as np
import pytest
from conftest import point_mass

from sepsim.controllers import sample_admissible
from sepsim.hybrid import (
    DomainSpec,
    GuardTimeout,
    Trace,
    TraceSchemaError,
    WalkingSystem,
    impact_map,
    initial_state,
    integrate_domain,
    poincare_distance,
    poincare_sequence,
    replay_subsystem,
    step_cycle,
)
from sepsim.multibody import (
    ConstraintSet,
    GroundContact,
    bias_forces,
    constraint_data,
    energy,
    mass_matrix,
)


def falling(model):
    n = model.n

    def ctrl(x):
        return -np.linalg.solve(mass_matrix(model, x[:n]), bias_forces(model, x[:n], x[n:]))

    dom = DomainSpec("air", ConstraintSet(), lambda x: float(x[1]), lambda x: float(x[n + 1]))
    return dom, ctrl


@pytest.mark.parametrize("h", [0.1, 1.0, 2.5])
def test_ballistic_guard_time(h):
    model = point_mass()
    dom, ctrl = falling(model)
    x0 = np.array([0.0, h, 0.0, 0.3, 0.0, 0.0])
    res = integrate_domain(model, dom, ctrl, x0, 5.0)
    assert res.hit
    assert res.t_end == pytest.approx(np.sqrt(2 * h / model.gravity), abs=1e-8)
    assert abs(res.guard_value) <= 1e-10
    # samples on the output grid plus the exit point
    assert np.allclose(np.diff(res.times[:-1]), 1e-3)


def test_guard_already_active():
    model = point_mass()
    dom, ctrl = falling(model)
    x0 = np.array([0.0, -0.01, 0.0, 0.0, -1.0, 0.0])
    res = integrate_domain(model, dom, ctrl, x0, 1.0, t0=2.0)
    assert res.hit and res.t_end == 2.0 and len(res.times) == 1


def test_no_guard_within_horizon():
    model = point_mass()
    dom, ctrl = falling(model)
    res = integrate_domain(model, dom, ctrl, np.array([0.0, 100.0, 0.0, 0.0, 0.0, 0.0]), 0.5)
    assert not res.hit
    assert res.t_end == pytest.approx(0.5)


def test_point_mass_plastic_impact():
    model = point_mass(mass=2.0)
    cons = ConstraintSet([GroundContact("p", (0.0, 0.0, 0.0))])
    qd_minus = np.array([0.4, -1.5, 0.0])
    qd_plus, lam = impact_map(model, cons, np.zeros(3), qd_minus)
    assert qd_plus == pytest.approx(np.zeros(3), abs=1e-14)
    assert lam[:2] == pytest.approx([-0.8, 3.0])


def test_impact_without_constraints_is_identity():
    model = point_mass()
    qd = np.array([0.4, -1.5, 0.2])
    qd_plus, lam = impact_map(model, ConstraintSet(), np.zeros(3), qd)
    assert qd_plus == pytest.approx(qd) and lam.size == 0


@pytest.mark.parametrize("edge", [("pt", "pw"), ("pw", "pt")])
def test_impact_dissipative_and_consistent(model1, contexts, edge):
    """Plastic impacts never add kinetic energy; the block system is met exactly."""
    pre, post = edge
    full = model1.full
    n = full.n
    rng = np.random.default_rng(11)
    for x in sample_admissible(contexts[pre], rng, 50, vel=1.5):
        q, qd = x[:n], x[n:]
        cons = model1.constraints(post, q)
        qd_plus, lam = impact_map(full, cons, q, qd)
        J, _ = constraint_data(full, cons, q, qd)
        D = mass_matrix(full, q)
        scale = 1 + np.abs(D @ qd).max()
        assert np.abs(D @ (qd_plus - qd) - J.T @ lam).max() <= 1e-10 * scale
        assert np.abs(J @ qd_plus).max() <= 1e-10 * (1 + np.abs(qd).max())
        assert energy(full, q, qd_plus)[0] - energy(full, q, qd)[0] <= 1e-10


# -- walking --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def walker(model1, ref_gait):
    return WalkingSystem(model1, ref_gait)


@pytest.fixture(scope="module")
def two_steps(walker):
    return step_cycle(walker, initial_state(walker), 2)


def test_zero_steps_returns_initial_state(walker):
    x0 = initial_state(walker)
    tr = step_cycle(walker, x0, 0)
    assert len(tr) == 1 and not tr.impacts
    assert np.array_equal(tr.x[0], x0)


def test_initial_state_on_zero_output_surface(walker):
    x0 = initial_state(walker)
    tr = step_cycle(walker, x0, 0)
    assert np.abs(tr.y[0]).max() <= 1e-10
    assert tr.phase[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_two_steps_visit_both_domains(two_steps):
    tr = two_steps
    assert tr.domain[0] == "pt" and tr.domain[-1] == "pt"
    assert [imp["edge"] for imp in tr.impacts] == ["pt->pw", "pw->pt"]
    assert all(imp["dT"] <= 0 for imp in tr.impacts)
    assert all(imp["post_velocity_residual"] <= 1e-10 for imp in tr.impacts)
    assert all(0.3 < s["duration"] < 1.0 for s in tr.steps)
    assert np.all(np.diff(tr.t) >= 0)


def test_outputs_stay_on_surface(two_steps):
    """Boundary matching at each entry keeps the degree-2 outputs tiny."""
    assert np.nanmax(np.abs(two_steps.y[:, 1:])) <= 1e-6


def test_every_entry_on_surface_and_phase_advancing(two_steps):
    tr = two_steps
    for a, b in tr.segments():
        assert np.abs(tr.y[a, 1:]).max() <= 1e-10
        assert tr.phase[a, 0] == pytest.approx(0.0, abs=1e-10)
        if b - a > 1:
            assert np.all(tr.phase[a:b, 1] > 0)


def test_trace_csv_roundtrip(tmp_path, two_steps):
    p = tmp_path / "trace.csv"
    two_steps.to_csv(p)
    back = Trace.from_csv(p)
    for name in ("t", "x", "u", "wrench", "phase", "y", "base"):
        assert np.array_equal(getattr(back, name), getattr(two_steps, name), equal_nan=True)
    assert back.domain == two_steps.domain
    assert np.array_equal(back.step, two_steps.step)


def test_trace_schema_errors(tmp_path, two_steps):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(TraceSchemaError):
        Trace.from_csv(empty)
    head_only = tmp_path / "head.csv"
    two_steps.to_csv(head_only)
    head_only.write_text(head_only.read_text().splitlines()[0] + "\n")
    with pytest.raises(TraceSchemaError):
        Trace.from_csv(head_only)
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(TraceSchemaError):
        Trace.from_csv(junk)


def test_replay_matches_full_run(walker, two_steps):
    rep = replay_subsystem(walker, two_steps)
    assert rep.error.max() <= 1e-6
    assert {d for _, d, _ in rep.max_error_per_domain()} == {"pt", "pw"}
    assert np.nanmax(np.abs(rep.ys[:, 1])) <= 1e-6


def test_boundary_signal_interpolation_exact_at_knots(two_steps):
    from scipy.interpolate import CubicSpline

    for a, b in two_steps.segments():
        if b - a < 2:
            continue
        ts = two_steps.t[a:b]
        for arr in (two_steps.base, two_steps.wrench, two_steps.phase):
            assert np.abs(CubicSpline(ts, arr[a:b], axis=0)(ts) - arr[a:b]).max() <= 1e-12 * (1 + np.abs(arr[a:b]).max())


def test_poincare_distance_ignores_forward_position(model1, walker):
    x = initial_state(walker)
    y = x.copy()
    y[model1.layout.index["B_x"]] += 3.0
    assert poincare_distance(model1, x, y) == 0.0
    y[model1.layout.index["B_z"]] += 0.1
    assert poincare_distance(model1, x, y) == pytest.approx(0.1)


def test_timeout_reported(model1, ref_gait):
    w = WalkingSystem(model1, ref_gait, t_max_step=0.05)
    with pytest.raises(GuardTimeout):
        step_cycle(w, initial_state(w), 1, record=False)


@pytest.mark.slow
def test_cycles_bounded_and_perturbation_decays(walker, model1):
    x0 = initial_state(walker)
    res, _ = poincare_sequence(walker, x0, 8)
    assert max(res) < 0.2
    assert res[-1] < res[0]
    xp = x0.copy()
    xp[model1.full.n + model1.layout.index["lh"]] += 0.05
    res_p, _ = poincare_sequence(walker, xp, 8)
    assert res_p[-1] < 0.5 * res_p[0]
