"""Full-system and prosthesis-subsystem controllers for the amputee model.

The full controller sees the whole state x = (theta, theta_dot).  The
subsystem controller only reads the measured state
X = (socket pose, socket twist, x_s, socket wrench), plus the phase in the
time-phase domain.  Both linearize the same s-group outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from .gait import Y2_NAMES, VertexGait, bezier_eval
from .multibody import constrained_dynamics, forward_kinematics, mass_matrix, project_to_manifold
from .prosthesis import AmputeeSystem, socket_wrench_force
from .sepctrl import (
    AffineSystem,
    Output,
    OutputBundle,
    SeparableStructure,
    TimePhase,
    feedback_linearize,
    pd_auxiliary,
    solve_decoupling,
    subsystem_control_law,
)

KP_DEFAULT = 100.0
KD_DEFAULT = 20.0
OUTPUT_NAMES = ("vhip",) + Y2_NAMES
MODES = {"pt": "state", "pw": "phase"}


@dataclass
class DomainContext:
    """Everything needed to evaluate controllers in one domain."""

    system: AmputeeSystem
    vertex: str
    gait: VertexGait
    kp: float = KP_DEFAULT
    kd: float = KD_DEFAULT
    mode: str | None = None
    sel: object = field(init=False)

    def __post_init__(self):
        if self.mode is None:
            self.mode = MODES[self.vertex]
        if self.mode not in ("state", "phase"):
            raise ValueError(f"unknown controller mode {self.mode!r}")
        self.sel = self.system.selection[self.vertex]
        n = self.system.full.n
        self.n = n
        self.c1, self.k, self.C2 = self.sel.maps(n)
        self.span = self.gait.dp_minus - self.gait.dp_plus
        self.s_rows = [OUTPUT_NAMES.index(name) for name in self.sel.s_outputs]
        self.r_rows = [i for i in range(len(OUTPUT_NAMES)) if i not in self.s_rows]
        self.s_idx = list(self.system.s_idx)
        m_idx = {c: i for i, c in enumerate(self.system.layout.actuated)}
        self.s_inputs = [m_idx["pk"], m_idx["pa"]]
        self.r_inputs = [i for i in range(len(m_idx)) if i not in self.s_inputs]
        # subsystem coefficient rows restricted to (theta_pk, theta_pa)
        self.c1_s = self.c1[self.s_idx]
        self.k_s = self.k[self.s_idx]

    def with_gait(self, gait: VertexGait) -> "DomainContext":
        return DomainContext(self.system, self.vertex, gait, self.kp, self.kd, self.mode)

    # -- phase ---------------------------------------------------------------

    def phase_from_state(self, q, qd, qdd=None) -> TimePhase:
        tau = (self.k @ q - self.gait.dp_plus) / self.span
        tau_d = self.k @ qd / self.span
        tau_dd = self.k @ qdd / self.span if qdd is not None else 0.0
        return TimePhase(float(tau), float(tau_d), float(tau_dd))

    def constraints(self, q):
        return self.system.constraints(self.vertex, q)


def _bezier_pack(alpha, tau):
    return bezier_eval(alpha, tau, 0), bezier_eval(alpha, tau, 1), bezier_eval(alpha, tau, 2)


# -- output maps ----------------------------------------------------------------


@dataclass
class OutputMaps:
    """Stacked outputs (vhip first, then the five degree-2 rows).

    y, yd      values and first derivatives (yd[0] unused for vhip)
    Jq         (6, n): d(highest-derivative)/d(acceleration); row 0 = c1
    drift      (6,):   part of the highest derivative not multiplying qdd
    ff_dd      (6,):   d1 coefficient multiplying tau_dd (time-phase mode)
    """

    y: np.ndarray
    yd: np.ndarray
    Jq: np.ndarray
    drift: np.ndarray
    ff_dd: np.ndarray


def output_maps(ctx: DomainContext, q, qd, phase: TimePhase | None = None) -> OutputMaps:
    """Output maps in the full coordinates.

    state mode:  tau = tau(q); y2 = C2 q - b(tau(q)), exact chain rule.
    phase mode:  tau, tau_dot supplied; y2 = C2 q - b(tau); the desired
                 acceleration d2 tau_dot^2 + d1 tau_dd is feedforward.
    """
    g = ctx.gait
    if ctx.mode == "state":
        phase = ctx.phase_from_state(q, qd)
    elif phase is None:
        raise ValueError("time-phase mode requires an external phase")
    b0, b1, b2 = _bezier_pack(g.alpha, phase.tau)
    y = np.empty(6)
    yd = np.empty(6)
    Jq = np.empty((6, ctx.n))
    drift = np.zeros(6)
    ff_dd = np.zeros(6)
    y[0] = ctx.c1 @ qd - g.v_hip
    yd[0] = 0.0
    Jq[0] = ctx.c1
    y[1:] = ctx.C2 @ q - b0
    yd[1:] = ctx.C2 @ qd - b1 * phase.tau_d
    if ctx.mode == "state":
        Jq[1:] = ctx.C2 - np.outer(b1, ctx.k) / ctx.span
        drift[1:] = -b2 * phase.tau_d**2
    else:
        Jq[1:] = ctx.C2
        drift[1:] = -b2 * phase.tau_d**2
        ff_dd[1:] = -b1
    return OutputMaps(y, yd, Jq, drift, ff_dd)


def auxiliary(ctx: DomainContext, om: OutputMaps) -> np.ndarray:
    mu = -ctx.kp * om.y - ctx.kd * om.yd
    mu[0] = -ctx.kd * om.y[0]
    return mu


# -- full controller --------------------------------------------------------------


@dataclass
class ControlResult:
    u: np.ndarray
    qdd: np.ndarray
    F: np.ndarray
    phase: TimePhase
    y: np.ndarray
    yd: np.ndarray


def _full_solve(ctx, cd, om, mu, tau_dd):
    A = om.Jq @ cd.M
    lf = om.Jq @ cd.qdd0 + om.drift + om.ff_dd * tau_dd
    return -solve_decoupling(A, lf - mu)


def full_control(ctx: DomainContext, x, phase: TimePhase | None = None, cd=None) -> ControlResult:
    """Full-knowledge feedback linearizing controller.

    state mode: u_pt(x).  phase mode with `phase` given: u_pw(x, T) with the
    external (tau, tau_dot, tau_dd).  Phase mode with `phase=None`: the phase
    is read from the state and tau_dd is solved consistently with the
    resulting acceleration (u is affine in tau_dd, so this is a scalar solve).
    """
    n = ctx.n
    q, qd = x[:n], x[n:]
    if cd is None:
        cd = constrained_dynamics(ctx.system.full, ctx.constraints(q), q, qd)
    consistent = ctx.mode == "phase" and phase is None
    if consistent:
        phase = ctx.phase_from_state(q, qd)
    om = output_maps(ctx, q, qd, phase)
    mu = auxiliary(ctx, om)
    if consistent:
        u0 = _full_solve(ctx, cd, om, mu, 0.0)
        u1 = _full_solve(ctx, cd, om, mu, 1.0) - u0
        a = ctx.k @ cd.qdd(u0) / ctx.span
        b = ctx.k @ (cd.M @ u1) / ctx.span
        tau_dd = a / (1.0 - b)
        phase = TimePhase(phase.tau, phase.tau_d, float(tau_dd))
        u = u0 + u1 * tau_dd
    else:
        u = _full_solve(ctx, cd, om, mu, phase.tau_dd if ctx.mode == "phase" else 0.0)
    qdd = cd.qdd(u)
    if ctx.mode == "state":
        phase = ctx.phase_from_state(q, qd, qdd)
    return ControlResult(u, qdd, cd.split(u), phase, om.y, om.yd)


# -- generic-path output bundles ----------------------------------------------------


def full_outputs(ctx: DomainContext, phase: TimePhase | None = None) -> OutputBundle:
    """The six outputs as scalar evaluators on the full state x (for the
    generic Lie-derivative code paths and the numerical checkers)."""
    n = ctx.n
    g = ctx.gait
    groups = ["s" if i in ctx.s_rows else "r" for i in range(6)]
    out = OutputBundle()
    out.append(Output("vhip", 1, lambda x: float(ctx.c1 @ x[n:] - g.v_hip), groups[0], vel_coeff=ctx.c1.copy()))

    def tau_of(x):
        if ctx.mode == "state":
            return (ctx.k @ x[:n] - g.dp_plus) / ctx.span
        return phase.tau

    for i, name in enumerate(Y2_NAMES):
        a = g.alpha[i]
        row = ctx.C2[i]

        def value(x, a=a, row=row):
            return float(row @ x[:n] - bezier_eval(a, tau_of(x), 0))

        if ctx.mode == "state":

            def jac(x, a=a, row=row):
                return row - bezier_eval(a, tau_of(x), 1) * ctx.k / ctx.span

            def hess(x, a=a):
                return -bezier_eval(a, tau_of(x), 2) * np.outer(ctx.k, ctx.k) / ctx.span**2

        else:

            def jac(x, row=row):
                return row

            def hess(x):
                return np.zeros((n, n))

        out.append(Output(name, 2, value, groups[i + 1], jac=jac, hess=hess))
    return out


def phase_feedforward(ctx: DomainContext):
    """Desired highest derivatives in time-phase mode, per output."""

    def desired(phase: TimePhase):
        ff = np.zeros(6)
        ff[1:] = bezier_eval(ctx.gait.alpha, phase.tau, 2) * phase.tau_d**2 + bezier_eval(ctx.gait.alpha, phase.tau, 1) * phase.tau_dd
        return ff

    return desired


def s_outputs(ctx: DomainContext, phase: TimePhase | None = None) -> OutputBundle:
    """s-group outputs as evaluators on x_s = (theta_pk, theta_pa, dtheta_pk, dtheta_pa)."""
    g = ctx.gait
    out = OutputBundle()
    k_s, span = ctx.k_s, ctx.span

    def tau_of(z):
        if ctx.mode == "state":
            return (k_s @ z[:2] - g.dp_plus) / span
        return phase.tau

    for r in ctx.s_rows:
        if r == 0:
            c = ctx.c1_s.copy()
            out.append(Output("vhip", 1, lambda z, c=c: float(c @ z[2:] - g.v_hip), "s", vel_coeff=c))
            continue
        a = g.alpha[r - 1]
        row = ctx.C2[r - 1][ctx.s_idx]

        def value(z, a=a, row=row):
            return float(row @ z[:2] - bezier_eval(a, tau_of(z), 0))

        if ctx.mode == "state":

            def jac(z, a=a, row=row):
                return row - bezier_eval(a, tau_of(z), 1) * k_s / span

            def hess(z, a=a):
                return -bezier_eval(a, tau_of(z), 2) * np.outer(k_s, k_s) / span**2

        else:

            def jac(z, row=row):
                return row

            def hess(z):
                return np.zeros((2, 2))

        out.append(Output(Y2_NAMES[r - 1], 2, value, "s", jac=jac, hess=hess))
    return out


def s_auxiliary(ctx: DomainContext, outputs: OutputBundle, xs, phase: TimePhase | None) -> np.ndarray:
    """mu_s from s-output values and rates at x_s."""
    xs = np.asarray(xs, dtype=float)
    y = outputs.values(xs)
    yd = np.zeros(len(outputs))
    for i, o in enumerate(outputs):
        if o.degree == 2:
            yd[i] = o.jac(xs) @ xs[2:]
            if ctx.mode == "phase":
                yd[i] -= bezier_eval(ctx.gait.alpha[Y2_NAMES.index(o.name)], phase.tau, 1) * phase.tau_d
    return pd_auxiliary(outputs, y, yd, ctx.kp, ctx.kd)


def _s_feedforward(ctx, outputs, phase):
    if ctx.mode != "phase":
        return None
    ff = np.zeros(len(outputs))
    for i, o in enumerate(outputs):
        if o.degree == 2:
            a = ctx.gait.alpha[Y2_NAMES.index(o.name)]
            ff[i] = bezier_eval(a, phase.tau, 2) * phase.tau_d**2 + bezier_eval(a, phase.tau, 1) * phase.tau_dd
    return ff


def _affine_on_xs(a0, M):
    return AffineSystem.mechanical(2, 2, lambda _z: (a0, M))


# -- separable-subsystem control laws -----------------------------------------------


def full_s_dynamics(ctx: DomainContext, x, F=None, cd=None):
    """(a0_s, M_ss): s-rows of D^-1(-H + J^T F) and of D^-1 B in the s columns.

    F is the measured constraint wrench; by default it is realized under the
    full closed loop at x.
    """
    n = ctx.n
    q, qd = x[:n], x[n:]
    if cd is None:
        cd = constrained_dynamics(ctx.system.full, ctx.constraints(q), q, qd)
    if F is None:
        F = cd.split(full_control(ctx, x, cd=cd).u)
    acc = cho_solve(cd.cho, -cd.H + cd.J.T @ F)
    DiB = cho_solve(cd.cho, ctx.system.full.B)
    return acc[ctx.s_idx], DiB[np.ix_(ctx.s_idx, ctx.s_inputs)]


def u_ssc(ctx: DomainContext, x, F=None, phase: TimePhase | None = None) -> np.ndarray:
    """Separable subsystem control law evaluated from the full state."""
    xs = np.asarray(x)[ctx.system.xs_idx]
    if ctx.mode == "phase" and phase is None:
        raise ValueError("time-phase mode requires an external phase")
    a0, M = full_s_dynamics(ctx, x, F)
    outs = s_outputs(ctx, phase)
    mu = s_auxiliary(ctx, outs, xs, phase)
    return subsystem_control_law(_affine_on_xs(a0, M), outs, mu, xs, _s_feedforward(ctx, outs, phase))


def subsystem_dynamics(ctx: DomainContext, X):
    """Constrained subsystem dynamics at the measured state, socket wrench injected."""
    sysm = ctx.system
    qbar, qbar_d, wrench = sysm.sub_state(X)
    cons = sysm.sub_constraints(ctx.vertex, qbar)
    return constrained_dynamics(sysm.sub, cons, qbar, qbar_d, extra_force=socket_wrench_force(qbar, wrench))


def u_bar_s(ctx: DomainContext, X, phase: TimePhase | None = None, cd=None) -> np.ndarray:
    """Subsystem controller from the measured augmented state only.

    In prosthesis stance the ground wrench is eliminated through the
    subsystem constraint, so the accelerations are affine in u_bar.
    """
    if ctx.mode == "phase" and phase is None:
        raise ValueError("time-phase mode requires an external phase")
    if cd is None:
        cd = subsystem_dynamics(ctx, X)
    s = list(ctx.system.sub_layout.s_coords)
    xs = np.asarray(X)[6:10]
    outs = s_outputs(ctx, phase)
    mu = s_auxiliary(ctx, outs, xs, phase)
    return subsystem_control_law(_affine_on_xs(cd.qdd0[s], cd.M[s]), outs, mu, xs, _s_feedforward(ctx, outs, phase))


def measured_state(ctx: DomainContext, x, u=None, phase: TimePhase | None = None) -> np.ndarray:
    """T(x) with the socket wrench evaluated at the applied input."""
    n = ctx.n
    q, qd = x[:n], x[n:]
    cd = constrained_dynamics(ctx.system.full, ctx.constraints(q), q, qd)
    if u is None:
        u = full_control(ctx, x, phase=phase, cd=cd).u
    return ctx.system.measurement_transform(x, cd.split(u))


# -- separable form and subsystem-equivalence evaluators -------------------------------------------


def separable_form(ctx: DomainContext, phase: TimePhase | None = None) -> AffineSystem:
    """x_dot = f(x) + g(x) u with the measured wrench inside the drift.

    f = (theta_dot, D^-1(-H + J^T F)), g = (0, D^-1 B), where F is realized
    under the full closed loop at x.
    """
    n, model = ctx.n, ctx.system.full

    def accel(x):
        q, qd = x[:n], x[n:]
        cd = constrained_dynamics(model, ctx.constraints(q), q, qd)
        F = cd.split(full_control(ctx, x, phase=phase, cd=cd).u)
        return cho_solve(cd.cho, -cd.H + cd.J.T @ F), cho_solve(cd.cho, model.B)

    def g_only(x):
        D = mass_matrix(model, x[:n])
        return np.vstack([np.zeros((n, model.m)), np.linalg.solve(D, model.B)])

    sysf = AffineSystem.mechanical(n, model.m, accel)
    sysf.g = g_only
    return sysf


def separable_structure(ctx: DomainContext) -> SeparableStructure:
    s_states = tuple(int(i) for i in ctx.system.xs_idx)
    r_states = tuple(i for i in range(2 * ctx.n) if i not in s_states)
    return SeparableStructure(r_states, s_states, tuple(ctx.r_inputs), tuple(ctx.s_inputs))


def equivalence_fields_full(ctx: DomainContext, phase: TimePhase | None = None):
    """(f^s(x), g^s(x)) of the full separable form restricted to x_s."""

    def f_s(x):
        a0, _ = full_s_dynamics(ctx, x, F=_closed_loop_wrench(ctx, x, phase))
        return np.concatenate([x[ctx.n :][ctx.s_idx], a0])

    def g_s(x):
        model = ctx.system.full
        DiB = np.linalg.solve(mass_matrix(model, x[: ctx.n]), model.B)
        return np.vstack([np.zeros((2, 2)), DiB[np.ix_(ctx.s_idx, ctx.s_inputs)]])

    return f_s, g_s


def _closed_loop_wrench(ctx, x, phase):
    n = ctx.n
    cd = constrained_dynamics(ctx.system.full, ctx.constraints(x[:n]), x[:n], x[n:])
    return cd.split(full_control(ctx, x, phase=phase, cd=cd).u)


def equivalence_fields_subsystem(ctx: DomainContext, phase: TimePhase | None = None):
    """(f_bar^s(X), g_bar^s(X)) of the subsystem, ground wrench realized
    under the subsystem closed loop."""
    s = list(ctx.system.sub_layout.s_coords)
    model = ctx.system.sub

    def f_bar(X):
        cd = subsystem_dynamics(ctx, X)
        ub = u_bar_s(ctx, X, phase, cd=cd)
        Fbar = cd.split(ub)
        acc = cho_solve(cd.cho, -cd.H + cd.J.T @ Fbar)
        return np.concatenate([np.asarray(X)[8:10], acc[s]])

    def g_bar(X):
        qbar, _, _ = ctx.system.sub_state(X)
        DiB = np.linalg.solve(mass_matrix(model, qbar), model.B)
        return np.vstack([np.zeros((2, 2)), DiB[s]])

    return f_bar, g_bar


# -- admissible samples -----------------------------------------------------------------


def place_on_ground(ctx: DomainContext, q) -> np.ndarray:
    """Shift and rotate the base so the stance foot is flat at the origin."""
    q = np.array(q, dtype=float)
    model = ctx.system.full
    foot = ctx.system.STANCE_FOOT[ctx.vertex]
    pose = forward_kinematics(model, foot, q)
    q[2] -= pose[2]
    pose = forward_kinematics(model, foot, q)
    q[0] -= pose[0]
    q[1] -= pose[1]
    return q


def sample_admissible(ctx: DomainContext, rng, n_samples: int, spread=0.25, vel=1.0):
    """Random states on the domain's constraint manifold near a walking posture."""
    model = ctx.system.full
    idx = ctx.system.layout.index
    out = []
    for _ in range(n_samples):
        q = np.zeros(model.n)
        for name in ("lh", "lk", "la", "rh", "pk", "pa"):
            q[idx[name]] = rng.uniform(-spread, spread)
        q[idx["lk"]] = -abs(q[idx["lk"]])
        q[idx["pk"]] = -abs(q[idx["pk"]])
        q = place_on_ground(ctx, q)
        qd = rng.uniform(-vel, vel, model.n)
        q, qd = project_to_manifold(model, ctx.constraints(q), q, qd)
        out.append(np.concatenate([q, qd]))
    return out


def random_phase(ctx: DomainContext, x, rng) -> TimePhase:
    """Phase read from the state plus a random tau_dd, as an external supplier would give."""
    ph = ctx.phase_from_state(x[: ctx.n], x[ctx.n :])
    return TimePhase(ph.tau, ph.tau_d, float(rng.uniform(-2.0, 2.0)))
