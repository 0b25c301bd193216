"""Two-domain hybrid walking: guarded integration, plastic impacts, multi-step
runs, Poincare diagnostics and subsystem replay from a recorded trace."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import DOP853, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .controllers import DomainContext, full_control, s_outputs, subsystem_dynamics, u_bar_s
from .gait import VERTICES, GaitError, GaitParams, VertexGait, boundary_match
from .multibody import (
    ConstraintSet,
    RankDeficiencyError,
    constraint_data,
    energy,
    forward_kinematics,
    frame_kinematics,
    mass_matrix,
    project_to_manifold,
)
from .prosthesis import AmputeeSystem
from .sepctrl import TimePhase

log = logging.getLogger(__name__)

RTOL = 1e-10
ATOL = 1e-12
PROJECTION_TOL = 1e-10
GUARD_MIN_TAU = 0.5
FALL_FRACTION = 0.6
NEXT = {"pt": "pw", "pw": "pt"}


class HybridError(RuntimeError):
    pass


class FallError(HybridError):
    pass


class GuardTimeout(HybridError):
    pass


@dataclass
class DomainSpec:
    """Continuous domain: constraints, guard and controller binding.

    guard(x) is the swing-foot sole height; it is active when armed(x) holds
    and the guard is decreasing (guard_rate(x) < 0).
    """

    vertex: str
    constraints: ConstraintSet
    guard: Callable[[np.ndarray], float]
    guard_rate: Callable[[np.ndarray], float]
    armed: Callable[[np.ndarray], bool] = lambda x: True
    binding: str = "state"


@dataclass(frozen=True)
class ResetMap:
    edge: tuple[str, str]
    constraints: ConstraintSet


@dataclass
class DomainResult:
    times: np.ndarray
    states: np.ndarray
    t_end: float
    x_end: np.ndarray
    hit: bool
    guard_value: float
    projections: int = 0


def _residuals(model, cons, x):
    n = model.n
    if not cons:
        return 0.0, 0.0
    pos = np.abs(cons.residual(model, x[:n])).max()
    J, _ = constraint_data(model, cons, x[:n], x[n:], check_rank=False)
    return pos, np.abs(J @ x[n:]).max()


def integrate_domain(
    model,
    domain: DomainSpec,
    controller: Callable[[np.ndarray], np.ndarray],
    x0,
    t_max: float,
    t0: float = 0.0,
    rate: float = 1000.0,
    rtol: float = RTOL,
    atol: float = ATOL,
    step_check: Callable[[float, np.ndarray], None] | None = None,
) -> DomainResult:
    """Integrate x_dot = (qd, controller(x)) until the guard fires or t_max.

    Samples are returned on the grid t0 + k/rate (k >= 0) plus the exit
    point.  After every accepted step the state is projected back onto the
    constraint manifold if its residual exceeds the projection tolerance.
    """
    n = model.n
    x0 = np.array(x0, dtype=float)
    if domain.armed(x0) and domain.guard(x0) <= 0.0 and domain.guard_rate(x0) < 0.0:
        return DomainResult(np.array([t0]), x0[None, :], t0, x0, True, float(domain.guard(x0)))

    def rhs(t, x):
        return np.concatenate([x[n:], controller(x)])

    solver = DOP853(rhs, t0, x0, t0 + t_max, rtol=rtol, atol=atol)
    times, states = [t0], [x0.copy()]
    dt = 1.0 / rate
    k_next = 1
    g_prev = domain.guard(x0)
    n_proj = 0
    while True:
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise HybridError(f"integrator failed at t = {solver.t:.6f}: {msg}")
        sol = solver.dense_output()
        x_new = solver.y
        g_new = domain.guard(x_new)
        hit_t = None
        if g_prev > 0.0 and g_new <= 0.0 and domain.armed(x_new):
            gfun = lambda t: domain.guard(sol(t))
            hit_t = brentq(gfun, t_prev, solver.t, xtol=1e-15, rtol=1e-15, maxiter=200)
        t_stop = hit_t if hit_t is not None else solver.t
        while t0 + k_next * dt < t_stop:
            tk = t0 + k_next * dt
            times.append(tk)
            states.append(sol(tk))
            k_next += 1
        if hit_t is not None:
            x_hit = sol(hit_t)
            times.append(hit_t)
            states.append(x_hit)
            return DomainResult(np.array(times), np.array(states), hit_t, x_hit, True, float(domain.guard(x_hit)), n_proj)
        if step_check is not None:
            step_check(solver.t, x_new)
        if domain.constraints:
            pos, vel = _residuals(model, domain.constraints, x_new)
            if pos > PROJECTION_TOL or vel > PROJECTION_TOL:
                q, qd = project_to_manifold(model, domain.constraints, x_new[:n], x_new[n:])
                solver.y = np.concatenate([q, qd])
                solver.f = solver.fun(solver.t, solver.y)
                n_proj += 1
        g_prev = domain.guard(solver.y)
        if solver.status == "finished":
            times.append(solver.t)
            states.append(solver.y.copy())
            return DomainResult(np.array(times), np.array(states), solver.t, solver.y.copy(), False, float(g_prev), n_proj)


def impact_map(model, post_constraints: ConstraintSet, q, qd_minus):
    """Plastic impact: [D -J^T; J 0][qd+; Lambda] = [D qd-; 0]."""
    q = np.asarray(q, dtype=float)
    qd_minus = np.asarray(qd_minus, dtype=float)
    J, _ = constraint_data(model, post_constraints, q, np.zeros(model.n))
    D = mass_matrix(model, q)
    k = J.shape[0]
    K = np.zeros((model.n + k, model.n + k))
    K[: model.n, : model.n] = D
    K[: model.n, model.n :] = -J.T
    K[model.n :, : model.n] = J
    rhs = np.concatenate([D @ qd_minus, np.zeros(k)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("impact block system singular") from exc
    return sol[: model.n], sol[model.n :]


# -- traces -----------------------------------------------------------------


@dataclass
class Trace:
    """Sampled closed-loop run; one row per output sample.

    Impact rows are annotated separately.  A domain's last sample is the
    pre-impact state; the next domain's first sample (same time) is the
    post-impact state.
    """

    coord_names: list
    t: np.ndarray
    domain: list
    step: np.ndarray
    x: np.ndarray
    u: np.ndarray
    wrench: np.ndarray
    phase: np.ndarray
    y: np.ndarray
    base: np.ndarray
    impacts: list = field(default_factory=list)
    steps: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def columns(self) -> list[str]:
        n = len(self.coord_names)
        cols = ["t", "domain", "step"]
        cols += [f"q_{c}" for c in self.coord_names] + [f"qd_{c}" for c in self.coord_names]
        cols += [f"u_{i}" for i in range(self.u.shape[1])]
        cols += ["Ff_x", "Ff_z", "Ff_m", "tau", "tau_d", "tau_dd"]
        cols += [f"y_{i}" for i in range(self.y.shape[1])]
        cols += ["sock_x", "sock_z", "sock_phi", "sock_xd", "sock_zd", "sock_phid"]
        assert len(cols) == 3 + 2 * n + self.u.shape[1] + 6 + self.y.shape[1] + 6
        return cols

    def segments(self):
        """(start, stop) index ranges of contiguous single-step samples."""
        out, start = [], 0
        for i in range(1, len(self.t) + 1):
            if i == len(self.t) or self.step[i] != self.step[start]:
                out.append((start, i))
                start = i
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for i in range(len(self.t)):
                row = [_fmt(self.t[i]), self.domain[i], str(int(self.step[i]))]
                for arr in (self.x[i], self.u[i], self.wrench[i], self.phase[i], self.y[i], self.base[i]):
                    row += [_fmt(v) for v in arr]
                w.writerow(row)

    def impacts_to_csv(self, path):
        keys = ["step", "t", "edge", "dT", "impulse_norm", "post_velocity_residual", "guard"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for imp in self.impacts:
                w.writerow([imp[k] if isinstance(imp[k], str) else _fmt(imp[k]) for k in keys])

    @classmethod
    def from_csv(cls, path) -> "Trace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise TraceSchemaError(f"{path}: empty file")
        head = rows[0]
        if head[:3] != ["t", "domain", "step"] or "Ff_x" not in head:
            raise TraceSchemaError(f"{path}: not a trace file")
        body = rows[1:]
        if not body:
            raise TraceSchemaError(f"{path}: trace has no samples")
        names = [h[2:] for h in head if h.startswith("q_")]
        n = len(names)
        nu = sum(h.startswith("u_") for h in head)
        ny = sum(h.startswith("y_") for h in head)
        try:
            num = np.array([[float(v) for i, v in enumerate(r) if i != 1] for r in body])
        except ValueError as exc:
            raise TraceSchemaError(f"{path}: non-numeric entry") from exc
        if num.shape[1] != len(head) - 1:
            raise TraceSchemaError(f"{path}: ragged rows")
        c = 2
        x = num[:, c : c + 2 * n]
        c += 2 * n
        u = num[:, c : c + nu]
        c += nu
        wrench = num[:, c : c + 3]
        phase = num[:, c + 3 : c + 6]
        c += 6
        y = num[:, c : c + ny]
        base = num[:, c + ny : c + ny + 6]
        return cls(names, num[:, 0], [r[1] for r in body], num[:, 1].astype(int), x, u, wrench, phase, y, base)


class TraceSchemaError(ValueError):
    pass


def _fmt(v) -> str:
    return f"{float(v):.17g}"


# -- walking system -------------------------------------------------------------


@dataclass
class WalkingSystem:
    """Amputee model, gait and controller settings for multi-step runs."""

    system: AmputeeSystem
    gait: GaitParams
    kp: float = 100.0
    kd: float = 20.0
    rate: float = 1000.0
    t_max_step: float = 3.0
    fall_fraction: float = FALL_FRACTION

    def with_gait(self, gait: GaitParams) -> "WalkingSystem":
        return WalkingSystem(self.system, gait, self.kp, self.kd, self.rate, self.t_max_step, self.fall_fraction)

    def context(self, vertex: str, vg: VertexGait | None = None) -> DomainContext:
        return DomainContext(self.system, vertex, vg if vg is not None else self.gait[vertex], self.kp, self.kd)

    def domain(self, ctx: DomainContext, q) -> DomainSpec:
        model = self.system.full
        n = model.n
        swing = self.system.SWING_FOOT[ctx.vertex]

        def guard(x):
            return float(forward_kinematics(model, swing, x[:n])[1])

        def guard_rate(x):
            return float(frame_kinematics(model, swing, x[:n], x[n:])[2][1])

        def armed(x):
            return ctx.phase_from_state(x[:n], x[n:]).tau >= GUARD_MIN_TAU and guard_rate(x) < 0.0

        return DomainSpec(ctx.vertex, ctx.constraints(q), guard, guard_rate, armed, ctx.mode)

    def hip_height(self, q) -> float:
        return float(forward_kinematics(self.system.full, "rthigh", q)[1])

    def reset(self, vertex_next: str, x):
        n = self.system.full.n
        q = x[:n]
        cons = self.system.constraints(vertex_next, q)
        qd_plus, impulse = impact_map(self.system.full, cons, q, x[n:])
        return np.concatenate([q, qd_plus]), impulse, cons


def _sample_columns(walker: WalkingSystem, ctx: DomainContext, cons, states):
    model = walker.system.full
    n = model.n
    k = len(states)
    u = np.empty((k, model.m))
    wrench = np.empty((k, 3))
    phase = np.empty((k, 3))
    y = np.empty((k, 6))
    base = np.empty((k, 6))
    from .multibody import constrained_dynamics

    for i, x in enumerate(states):
        cd = constrained_dynamics(model, cons, x[:n], x[n:])
        r = full_control(ctx, x, cd=cd)
        u[i] = r.u
        X = walker.system.measurement_transform(x, r.F)
        wrench[i] = X[10:13]
        base[i] = X[:6]
        phase[i] = (r.phase.tau, r.phase.tau_d, r.phase.tau_dd)
        y[i] = r.y
    return u, wrench, phase, y, base


def initial_state(walker: WalkingSystem, vertex: str = "pt") -> np.ndarray:
    """State on the zero-output surface at tau = 0 of `vertex`.

    Joint angles solve y2 = 0 and tau = 0 (six linear equations); the base
    puts the stance foot flat at the origin.  Joint rates solve y1 = 0 and
    y2_dot = 0, base and weld rates solve J qd = 0.
    """
    from .controllers import place_on_ground

    ctx = walker.context(vertex)
    model = walker.system.full
    n = model.n
    idx = walker.system.layout.index
    joints = [idx[c] for c in ("lh", "lk", "la", "rh", "pk", "pa")]
    vg = ctx.gait
    A = np.vstack([ctx.C2[:, joints], ctx.k[joints]])
    b = np.concatenate([vg.alpha[:, 0], [vg.dp_plus]])
    q = np.zeros(n)
    q[joints] = np.linalg.solve(A, b)
    q = place_on_ground(ctx, q)
    cons = ctx.constraints(q)
    J, _ = constraint_data(model, cons, q, np.zeros(n))
    slope = 6.0 * (vg.alpha[:, 1] - vg.alpha[:, 0]) / ctx.span
    M = np.vstack([ctx.C2 - np.outer(slope, ctx.k), ctx.c1, J])
    rhs = np.concatenate([np.zeros(5), [vg.v_hip], np.zeros(J.shape[0])])
    qd = np.linalg.solve(M, rhs)
    return np.concatenate([q, qd])


def step_cycle(walker: WalkingSystem, x0, n_steps: int, start: str = "pt", t0: float = 0.0, record: bool = True) -> Trace:
    """Alternate domains and impacts for `n_steps` domain traversals.

    Each domain starts by re-anchoring its gait on the entry state
    (boundary matching); a state already on the zero-output surface at the
    phase origin leaves the gait unchanged.
    """
    model = walker.system.full
    n = model.n
    x = np.array(x0, dtype=float)
    vertex = start
    t = t0
    fall_z = walker.fall_fraction * walker.system.leg_length
    cols = {"t": [t0], "domain": [start], "step": [0], "x": [x.copy()]}
    blocks = {"u": [], "wrench": [], "phase": [], "y": [], "base": []}
    impacts, steps = [], []

    if n_steps == 0:
        ctx = walker.context(vertex)
        vals = _sample_columns(walker, ctx, ctx.constraints(x[:n]), [x]) if record else None
        return _assemble(model, cols, blocks, impacts, steps, vals)

    cols = {"t": [], "domain": [], "step": [], "x": []}
    for k in range(n_steps):
        sel = walker.system.selection[vertex]
        vg = boundary_match(walker.gait[vertex], x[:n], x[n:], sel)
        ctx = walker.context(vertex, vg)
        dom = walker.domain(ctx, x[:n])

        def controller(z, ctx=ctx):
            return full_control(ctx, z).qdd

        def step_check(tt, z, k=k):
            h = walker.hip_height(z[:n])
            if h < fall_z:
                raise FallError(f"fall detected in step {k} at t = {tt:.4f}: hip height {h:.3f} m below {fall_z:.3f} m")

        res = integrate_domain(model, dom, controller, x, walker.t_max_step, t0=t, rate=walker.rate, step_check=step_check)
        if not res.hit:
            raise GuardTimeout(f"step {k} ({vertex}) reached t_max = {walker.t_max_step} s without touchdown")
        cols["t"] += list(res.times)
        cols["domain"] += [vertex] * len(res.times)
        cols["step"] += [k] * len(res.times)
        cols["x"] += list(res.states)
        if record:
            vals = _sample_columns(walker, ctx, dom.constraints, res.states)
            for key, v in zip(blocks, vals):
                blocks[key].append(v)
        nxt = NEXT[vertex]
        x_plus, impulse, cons_plus = walker.reset(nxt, res.x_end)
        T_minus = energy(model, res.x_end[:n], res.x_end[n:])[0]
        T_plus = energy(model, x_plus[:n], x_plus[n:])[0]
        J_plus, _ = constraint_data(model, cons_plus, x_plus[:n], x_plus[n:])
        impacts.append(
            {
                "step": k,
                "t": res.t_end,
                "edge": f"{vertex}->{nxt}",
                "dT": T_plus - T_minus,
                "impulse_norm": float(np.linalg.norm(impulse)),
                "post_velocity_residual": float(np.abs(J_plus @ x_plus[n:]).max()),
                "guard": res.guard_value,
            }
        )
        tau_hit = ctx.phase_from_state(res.x_end[:n], res.x_end[n:]).tau
        steps.append({"step": k, "vertex": vertex, "t_start": t, "duration": res.t_end - t, "tau_end": tau_hit, "projections": res.projections, "gait": vg})
        log.info("step %d %s: %.4f s, tau_end %.4f", k, vertex, res.t_end - t, tau_hit)
        t = res.t_end
        x = x_plus
        vertex = nxt
    # final post-impact state opens the next domain
    cols["t"].append(t)
    cols["domain"].append(vertex)
    cols["step"].append(n_steps)
    cols["x"].append(x.copy())
    if record:
        try:
            vg = boundary_match(walker.gait[vertex], x[:n], x[n:], walker.system.selection[vertex])
        except GaitError:
            vg = walker.gait[vertex]  # the run ends here; columns are informational
        ctx = walker.context(vertex, vg)
        vals = _sample_columns(walker, ctx, ctx.constraints(x[:n]), [x])
        for key, v in zip(blocks, vals):
            blocks[key].append(v)
    tr = _assemble(model, cols, blocks, impacts, steps, None, record)
    return tr


def _assemble(model, cols, blocks, impacts, steps, single=None, record=True):
    k = len(cols["t"])
    if single is not None:
        for key, v in zip(blocks, single):
            blocks[key] = [v]
    if record and blocks["u"]:
        arr = {key: np.vstack(v) for key, v in blocks.items()}
    else:
        arr = {"u": np.full((k, model.m), np.nan), "wrench": np.full((k, 3), np.nan), "phase": np.full((k, 3), np.nan), "y": np.full((k, 6), np.nan), "base": np.full((k, 6), np.nan)}
    return Trace(
        list(model.coord_names),
        np.array(cols["t"], dtype=float),
        list(cols["domain"]),
        np.array(cols["step"], dtype=int),
        np.array(cols["x"]),
        arr["u"],
        arr["wrench"],
        arr["phase"],
        arr["y"],
        arr["base"],
        impacts,
        steps,
    )


# -- Poincare ---------------------------------------------------------------------

POS_WEIGHT = 1.0
VEL_WEIGHT = 0.1


def poincare_distance(system: AmputeeSystem, xa, xb) -> float:
    """Weighted distance ignoring forward base position."""
    n = system.full.n
    keep = [i for i in range(n) if i != system.layout.index["B_x"]]
    dq = (np.asarray(xa)[:n] - np.asarray(xb)[:n])[keep]
    dv = np.asarray(xa)[n:] - np.asarray(xb)[n:]
    return float(np.linalg.norm(np.concatenate([POS_WEIGHT * dq, VEL_WEIGHT * dv])))


def poincare_residual(walker: WalkingSystem, x0, start: str = "pt") -> float:
    """Distance between x0 and the state after one full cycle (two domains)."""
    tr = step_cycle(walker, x0, 2, start=start, record=False)
    return poincare_distance(walker.system, tr.x[-1], x0)


def poincare_sequence(walker: WalkingSystem, x0, n_cycles: int, start: str = "pt"):
    """Residuals |x_{k+1} - x_k| of successive cycle-start states."""
    tr = step_cycle(walker, x0, 2 * n_cycles, start=start, record=False)
    starts = [x0] + [tr.x[i] for i in range(1, len(tr.t)) if tr.step[i] != tr.step[i - 1] and tr.step[i] % 2 == 0]
    return [poincare_distance(walker.system, starts[k + 1], starts[k]) for k in range(len(starts) - 1)], tr


# -- subsystem replay -----------------------------------------------------------------


@dataclass
class ReplayResult:
    t: np.ndarray
    domain: list
    step: np.ndarray
    xs_full: np.ndarray
    xs_sub: np.ndarray
    u_full: np.ndarray
    u_sub: np.ndarray
    ys: np.ndarray  # s-output values along the replay (pad NaN where absent)
    ys_names: list

    @property
    def error(self) -> np.ndarray:
        return np.abs(self.xs_full - self.xs_sub)

    def max_error_per_domain(self) -> list[tuple[int, str, float]]:
        out = []
        for k in np.unique(self.step):
            m = self.step == k
            out.append((int(k), self.domain[int(np.argmax(m))], float(self.error[m].max())))
        return out

    def to_csv(self, path):
        names = ["pk", "pa", "pkd", "pad"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "domain", "step"] + [f"full_{c}" for c in names] + [f"sub_{c}" for c in names] + [f"err_{c}" for c in names] + ["u_full_pk", "u_full_pa", "u_sub_pk", "u_sub_pa"] + ["ys_0", "ys_1"])
            err = self.error
            for i in range(len(self.t)):
                row = [_fmt(self.t[i]), self.domain[i], str(int(self.step[i]))]
                for arr in (self.xs_full[i], self.xs_sub[i], err[i], self.u_full[i], self.u_sub[i], self.ys[i]):
                    row += [_fmt(v) for v in arr]
                w.writerow(row)


def replay_subsystem(walker: WalkingSystem, trace: Trace, rtol=RTOL, atol=ATOL) -> ReplayResult:
    """Drive the subsystem closed loop with recorded boundary signals.

    Per domain: socket pose/twist, socket wrench and (time-phase domain) the
    phase triple are cubic-interpolated from the trace; the subsystem state
    starts from the recorded post-impact x_s; the gait is re-anchored from
    the recorded domain-entry state exactly as in the full run.  The domain
    is left at tau = 1 or at the end of its recorded samples, whichever is
    first.
    """
    sysm = walker.system
    n = sysm.full.n
    xs_idx = sysm.xs_idx
    if len(trace) == 0:
        raise TraceSchemaError("empty trace")
    t_all, dom_all, step_all, full_all, sub_all, uf_all, us_all, ys_all = [], [], [], [], [], [], [], []
    s_in = None
    for a, b in trace.segments():
        if b - a < 2:
            continue
        vertex = trace.domain[a]
        x_entry = trace.x[a]
        vg = boundary_match(walker.gait[vertex], x_entry[:n], x_entry[n:], sysm.selection[vertex])
        ctx = walker.context(vertex, vg)
        s_in = ctx.s_inputs
        ts = trace.t[a:b]
        base_sp = CubicSpline(ts, trace.base[a:b], axis=0)
        wr_sp = CubicSpline(ts, trace.wrench[a:b], axis=0)
        ph_sp = CubicSpline(ts, trace.phase[a:b], axis=0)

        def X_of(t, z):
            return np.concatenate([base_sp(t), z, wr_sp(t)])

        def phase_of(t):
            if ctx.mode != "phase":
                return None
            p = ph_sp(t)
            return TimePhase(float(p[0]), float(p[1]), float(p[2]))

        def rhs(t, z):
            X = X_of(t, z)
            cd = subsystem_dynamics(ctx, X)
            ub = u_bar_s(ctx, X, phase_of(t), cd=cd)
            acc = cd.qdd(ub)[list(sysm.sub_layout.s_coords)]
            return np.concatenate([z[2:], acc])

        def tau_one(t, z):
            if ctx.mode == "phase":
                return ph_sp(t)[0] - 1.0
            return (ctx.k_s @ z[:2] - vg.dp_plus) / ctx.span - 1.0

        tau_one.terminal = True
        tau_one.direction = 1.0
        z0 = trace.x[a][xs_idx]
        sol = solve_ivp(rhs, (ts[0], ts[-1]), z0, method="DOP853", t_eval=ts, rtol=rtol, atol=atol, events=tau_one)
        m = len(sol.t)
        zs = sol.y.T
        for i in range(m):
            t = sol.t[i]
            X = X_of(t, zs[i])
            ph = phase_of(t)
            ub = u_bar_s(ctx, X, ph)
            outs = s_outputs(ctx, ph)
            yv = outs.values(zs[i])
            ys_all.append(np.pad(yv, (0, 2 - len(yv)), constant_values=np.nan))
            us_all.append(ub)
        t_all.append(sol.t)
        dom_all += [vertex] * m
        step_all += [int(trace.step[a])] * m
        full_all.append(trace.x[a : a + m][:, xs_idx])
        sub_all.append(zs)
        uf_all.append(trace.u[a : a + m][:, s_in])
    if not t_all:
        raise TraceSchemaError("trace has no complete domain")
    names = ["s0", "s1"]
    return ReplayResult(
        np.concatenate(t_all),
        dom_all,
        np.array(step_all),
        np.vstack(full_all),
        np.vstack(sub_all),
        np.vstack(uf_all),
        np.vstack(us_all),
        np.vstack(ys_all),
        names,
    )


VERTEX_ORDER = VERTICES
