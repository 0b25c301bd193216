"""Affine-control layer: Lie derivatives, feedback linearization, separable
subsystem control laws, and numerical checkers for the structural conditions
that make a subsystem controller equal to the full-system one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

FD_STEP = 1e-6
FD_STEP_NESTED = 1e-4
COND_LIMIT = 1e12
REL_DEGREE_TOL = 1e-8


class DecouplingSingularityError(np.linalg.LinAlgError):
    pass


class RelativeDegreeError(ValueError):
    pass


@dataclass
class AffineSystem:
    """x_dot = f(x) + g(x) u.

    When `accel` is given the state is x = (q, v) with q_dot = v and
    v_dot = a0(x) + M(x) u, where accel(x) returns (a0, M).  Analytic Lie
    derivatives are then available for position/velocity outputs.
    """

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    accel: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None

    @classmethod
    def mechanical(cls, nq: int, m: int, accel) -> "AffineSystem":
        def f(x):
            a0, _ = accel(x)
            return np.concatenate([x[nq:], a0])

        def g(x):
            _, M = accel(x)
            return np.vstack([np.zeros((nq, m)), M])

        return cls(2 * nq, m, f, g, accel)


@dataclass
class Output:
    """Scalar output with declared relative degree.

    Analytic hooks (optional, mechanical systems only):
      degree 2: `jac(x)` = dy/dq and `hess(x)` = d2y/dq2 (y depends on q only)
      degree 1: `vel_coeff` = constant c with y = c @ v + const
    """

    name: str
    degree: int
    value: Callable[[np.ndarray], float]
    group: str = "r"
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    hess: Callable[[np.ndarray], np.ndarray] | None = None
    vel_coeff: np.ndarray | None = None

    def __post_init__(self):
        if self.degree not in (1, 2):
            raise ValueError("relative degree must be 1 or 2")
        if self.group not in ("r", "s"):
            raise ValueError("group must be 'r' or 's'")

    @property
    def analytic(self) -> bool:
        if self.degree == 1:
            return self.vel_coeff is not None
        return self.jac is not None and self.hess is not None


class OutputBundle(list):
    def group(self, g: str) -> "OutputBundle":
        return OutputBundle(o for o in self if o.group == g)

    def values(self, x) -> np.ndarray:
        return np.array([o.value(x) for o in self])


@dataclass(frozen=True)
class SeparableStructure:
    r_states: tuple[int, ...]
    s_states: tuple[int, ...]
    r_inputs: tuple[int, ...]
    s_inputs: tuple[int, ...]

    def validate(self, n: int, m: int):
        if sorted(self.r_states + self.s_states) != list(range(n)):
            raise ValueError("state partition must cover 0..n-1 exactly once")
        if sorted(self.r_inputs + self.s_inputs) != list(range(m)):
            raise ValueError("input partition must cover 0..m-1 exactly once")


@dataclass(frozen=True)
class TimePhase:
    tau: float
    tau_d: float
    tau_dd: float


# -- Lie derivatives ------------------------------------------------------------


def _field(v, x):
    return np.asarray(v(x) if callable(v) else v, dtype=float)


def directional_derivative(y, v, x, h=None) -> float:
    """Central difference of y along the vector field v at x."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = FD_STEP * (1.0 + np.linalg.norm(x))
    if not h > 0:
        raise ValueError("step must be positive")
    d = _field(v, x)
    val = (y(x + h * d) - y(x - h * d)) / (2.0 * h)
    if not np.isfinite(val):
        raise FloatingPointError("non-finite directional derivative")
    return float(val)


def lie_derivative(y, f, x, h=None) -> float:
    return directional_derivative(y, f, x, h)


def _nested(y, inner, outer, x, h):
    """L_outer L_inner y by nested central differences with one Richardson
    step (fourth-order in h)."""

    def at(step):
        def lin(z):
            return directional_derivative(y, inner, z, step)

        return directional_derivative(lin, outer, x, step)

    return (4.0 * at(0.5 * h) - at(h)) / 3.0


def _fd_io(system: AffineSystem, outputs, x):
    """Nested central-difference Lie derivatives; the independent oracle."""
    x = np.asarray(x, dtype=float)
    nrm = 1.0 + np.linalg.norm(x)
    h1, h2 = FD_STEP * nrm, FD_STEP_NESTED * nrm
    A = np.zeros((len(outputs), system.m))
    lf = np.zeros(len(outputs))
    gx = system.g(x)
    for i, o in enumerate(outputs):
        if o.degree == 1:
            lf[i] = directional_derivative(o.value, system.f, x, h1)
            for j in range(system.m):
                A[i, j] = directional_derivative(o.value, gx[:, j], x, h1)
        else:
            for j in range(system.m):
                lg = directional_derivative(o.value, gx[:, j], x, h1)
                if abs(lg) > REL_DEGREE_TOL * (1.0 + np.abs(gx).max()):
                    raise RelativeDegreeError(f"output {o.name}: L_g y = {lg:.3e} but relative degree 2 declared")

            lf[i] = _nested(o.value, system.f, system.f, x, h2)
            for j in range(system.m):
                A[i, j] = _nested(o.value, system.f, gx[:, j], x, h2)
    return A, lf


def _analytic_io(system: AffineSystem, outputs, x):
    x = np.asarray(x, dtype=float)
    nq = system.n // 2
    v = x[nq:]
    a0, M = system.accel(x)
    A = np.empty((len(outputs), system.m))
    lf = np.empty(len(outputs))
    for i, o in enumerate(outputs):
        if o.degree == 1:
            c = np.asarray(o.vel_coeff)
            A[i] = c @ M
            lf[i] = c @ a0
        else:
            jq = o.jac(x)
            A[i] = jq @ M
            lf[i] = jq @ a0 + v @ o.hess(x) @ v
    return A, lf


def io_dynamics(system: AffineSystem, outputs, x, oracle: bool = False):
    """Decoupling matrix A(x) = L_g L_f^{gamma-1} y and drift L_f^gamma y."""
    if not oracle and system.accel is not None and all(o.analytic for o in outputs):
        return _analytic_io(system, outputs, x)
    return _fd_io(system, outputs, x)


def solve_decoupling(A, rhs):
    """Solve A u = rhs, failing hard on a singular decoupling matrix."""
    if A.shape[0] != A.shape[1]:
        raise DecouplingSingularityError(f"decoupling matrix is {A.shape}, expected square")
    if A.size == 0:
        return np.zeros(0)
    cond = np.linalg.cond(A)
    log.debug("decoupling matrix condition number %.3e", cond)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DecouplingSingularityError(f"decoupling matrix singular (cond = {cond:.3e})")
    return np.linalg.solve(A, rhs)


def feedback_linearize(system: AffineSystem, outputs, mu, x, feedforward=None, oracle=False) -> np.ndarray:
    """u = -A^{-1}(L_f^* y - feedforward - mu)."""
    A, lf = io_dynamics(system, outputs, x, oracle)
    rhs = lf - np.asarray(mu, dtype=float)
    if feedforward is not None:
        rhs = rhs - np.asarray(feedforward, dtype=float)
    return -solve_decoupling(A, rhs)


def subsystem_control_law(subsystem: AffineSystem, s_outputs, mu_s, point, feedforward=None) -> np.ndarray:
    """Separable subsystem control law.

    `subsystem` may be built from full-state information or from the
    augmented measured state; both go through the same linearizing solve.
    """
    return feedback_linearize(subsystem, s_outputs, mu_s, point, feedforward)


def time_varying_control(system, outputs, mu, x, phase: TimePhase, desired) -> np.ndarray:
    """Feedback linearization with phase-driven desired-trajectory feedforward.

    `desired(phase)` returns the stacked highest desired derivatives, one per
    output (d/dt for degree 1, d2/dt2 for degree 2).
    """
    return feedback_linearize(system, outputs, mu, x, feedforward=desired(phase))


# -- checkers -----------------------------------------------------------------


@dataclass
class CheckReport:
    name: str
    passed: bool
    residuals: dict[str, float]
    samples: int
    tolerance: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": "PASS" if self.passed else "FAIL",
            "samples": self.samples,
            "tolerance": self.tolerance,
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "notes": list(self.notes),
        }

    def line(self) -> str:
        worst = max(self.residuals.values(), default=0.0)
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  max_residual={worst:.3e}  tol={self.tolerance:.1e}  n={self.samples}"


def check_separability(system: AffineSystem, structure: SeparableStructure, samples, tol=1e-10) -> CheckReport:
    """Zero block g[s-rows, r-inputs]: u_r cannot act directly on x_s."""
    structure.validate(system.n, system.m)
    samples = list(samples)
    if not samples:
        raise ValueError("at least one sample state is required")
    worst, ok = 0.0, True
    if structure.r_inputs and structure.s_states:
        for x in samples:
            g = system.g(np.asarray(x, dtype=float))
            blk = np.abs(g[np.ix_(structure.s_states, structure.r_inputs)]).max()
            scale = 1.0 + np.abs(g).max()
            worst = max(worst, blk / scale)
            ok &= blk <= tol * scale
    notes = [] if structure.r_inputs else ["empty r-partition: vacuous"]
    return CheckReport("separability", bool(ok), {"g_sr_block": worst}, len(samples), tol, notes)


def _grad_fd(fun, x, idx, h):
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        e = np.zeros_like(x)
        e[i] = h
        out[k] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return out


def check_output_conditions(system: AffineSystem, structure: SeparableStructure, outputs, samples, tol=1e-6) -> CheckReport:
    """Cross-term cancellation conditions for the s-group outputs.

    Reports, over samples:
      locality        max |dy_s/dx_r|
      drift_locality  max |d(L_{f_s}^j y_s)/dx_r . f_r|,  j = 1..gamma-1
      input_locality  max |d(L_{f_s}^{gamma-1} y_s)/dx_r . g_r|
    with L_{f_s} h = dh/dx_s . f_s.  Derivatives by central differences.
    """
    structure.validate(system.n, system.m)
    samples = [np.asarray(x, dtype=float) for x in samples]
    s_idx, r_idx = list(structure.s_states), list(structure.r_states)
    s_out = [o for o in outputs if o.group == "s"]
    res = {"locality": 0.0, "drift_locality": 0.0, "input_locality": 0.0}
    for x in samples:
        h = FD_STEP * (1.0 + np.linalg.norm(x))
        gx = system.g(x)
        fx = system.f(x)
        scale = 1.0 + np.abs(gx).max()
        for o in s_out:
            def lie_s(z, o=o):
                grad = _grad_fd(o.value, z, s_idx, h)
                return grad @ system.f(z)[s_idx]

            dy_r = _grad_fd(o.value, x, r_idx, h)
            res["locality"] = max(res["locality"], np.abs(dy_r).max(initial=0.0))
            if o.degree == 2:
                d_lie = _grad_fd(lie_s, x, r_idx, h)
                res["drift_locality"] = max(res["drift_locality"], abs(d_lie @ fx[r_idx]) / scale)
                top = d_lie
            else:
                top = dy_r
            blk = top @ gx[r_idx, :]
            res["input_locality"] = max(res["input_locality"], np.abs(blk).max(initial=0.0) / scale)
    passed = all(v <= tol for v in res.values())
    notes = [] if samples else ["no samples: vacuous"]
    return CheckReport("output_conditions", passed, res, len(samples), tol, notes)


def check_subsystem_equivalence(f_s, g_s, f_bar, g_bar, transform, samples, tol=1e-8) -> CheckReport:
    """Residuals of f_s(x) = f_bar(T(x)) and g_s(x) = g_bar(T(x))."""
    res = {"f": 0.0, "g": 0.0}
    samples = list(samples)
    for x in samples:
        X = transform(x)
        fa, fb = np.asarray(f_s(x)), np.asarray(f_bar(X))
        ga, gb = np.asarray(g_s(x)), np.asarray(g_bar(X))
        res["f"] = max(res["f"], np.abs(fa - fb).max() / (1.0 + np.abs(fa).max()))
        res["g"] = max(res["g"], np.abs(ga - gb).max() / (1.0 + np.abs(ga).max()))
    passed = all(v <= tol for v in res.values())
    return CheckReport("subsystem_equivalence", passed, res, len(samples), tol)


def pd_auxiliary(outputs: Sequence[Output], y, yd, kp: float, kd: float) -> np.ndarray:
    """mu = -kp y - kd y_dot for degree-2 rows and -kd y for degree-1 rows."""
    mu = np.empty(len(outputs))
    for i, o in enumerate(outputs):
        mu[i] = -kd * y[i] if o.degree == 1 else -kp * y[i] - kd * yd[i]
    return mu
