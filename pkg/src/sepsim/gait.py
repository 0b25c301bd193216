"""Virtual constraints for the two-domain amputee gait.

Outputs per vertex (rows of y2 in this order):
    sc  = -theta_sk - theta_sa     stance calf
    sh  = -theta_sh                stance hip
    nsh = -theta_nsh               non-stance hip
    nsk =  theta_nsk               non-stance knee
    nsa =  theta_nsa               non-stance ankle
plus the relative-degree-1 hip velocity (r_sk + r_sa) dtheta_sk + r_sa dtheta_sa.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import comb

import numpy as np

from .fileio import read_versioned, write_versioned
from .sepctrl import TimePhase

BEZIER_ORDER = 6
ROLES = ("sh", "sk", "sa", "nsh", "nsk", "nsa")
Y2_NAMES = ("sc", "sh", "nsh", "nsk", "nsa")
VERTICES = ("pt", "pw")
GAIT_HEADER = "sepsim-gait v1"

_BIN = np.array([comb(BEZIER_ORDER, k) for k in range(BEZIER_ORDER + 1)], dtype=float)
_BIN5 = np.array([comb(5, k) for k in range(6)], dtype=float)
_BIN4 = np.array([comb(4, k) for k in range(5)], dtype=float)


class GaitError(ValueError):
    pass


def bernstein(tau: float, order: int = BEZIER_ORDER) -> np.ndarray:
    k = np.arange(order + 1)
    binom = np.array([comb(order, j) for j in k], dtype=float)
    return binom * tau**k * (1.0 - tau) ** (order - k)


def bezier_eval(alpha, tau: float, order: int = 0):
    """Value or tau-derivative of a 6th order Bezier polynomial.

    `alpha` may be a single coefficient vector (7,) or a stack (k, 7).
    Outside [0, 1] the curve is clamped: the value freezes at the endpoint
    and derivatives are zero.
    """
    alpha = np.asarray(alpha, dtype=float)
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if tau < 0.0 or tau > 1.0:
        if order:
            return np.zeros(alpha.shape[:-1]) if alpha.ndim > 1 else 0.0
        tau = min(max(tau, 0.0), 1.0)
    t, s = tau, 1.0 - tau
    if order == 0:
        k = np.arange(7)
        basis = _BIN * t**k * s ** (6 - k)
        return alpha @ basis
    if order == 1:
        k = np.arange(6)
        basis = _BIN5 * t**k * s ** (5 - k)
        return 6.0 * (np.diff(alpha, axis=-1) @ basis)
    k = np.arange(5)
    basis = _BIN4 * t**k * s ** (4 - k)
    return 30.0 * (np.diff(alpha, n=2, axis=-1) @ basis)


def bezier_fit(samples_tau, samples_y) -> np.ndarray:
    """Least-squares Bezier coefficients interpolating both end samples.

    `samples_y` is (N,) or (N, k); the result is (7,) or (k, 7).
    """
    tau = np.asarray(samples_tau, dtype=float)
    y = np.asarray(samples_y, dtype=float)
    y2 = y.reshape(len(tau), -1)
    Phi = np.array([bernstein(t) for t in tau])
    a0, a6 = y2[np.argmin(tau)], y2[np.argmax(tau)]
    rhs = y2 - np.outer(Phi[:, 0], a0) - np.outer(Phi[:, 6], a6)
    mid = np.linalg.lstsq(Phi[:, 1:6], rhs, rcond=None)[0]
    coeffs = np.vstack([a0, mid, a6]).T
    return coeffs[0] if y.ndim == 1 else coeffs


@dataclass(frozen=True)
class VertexGait:
    alpha: np.ndarray  # (5, 7), rows ordered as Y2_NAMES
    v_hip: float
    dp_plus: float
    dp_minus: float

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.shape != (5, BEZIER_ORDER + 1):
            raise GaitError(f"alpha must be 5x7, got {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        if self.dp_plus == self.dp_minus:
            raise GaitError("degenerate phase bounds: dp_plus == dp_minus")


@dataclass(frozen=True)
class GaitParams:
    pt: VertexGait
    pw: VertexGait

    def __getitem__(self, vertex: str) -> VertexGait:
        if vertex not in VERTICES:
            raise KeyError(vertex)
        return getattr(self, vertex)

    def with_vertex(self, vertex: str, vg: VertexGait) -> "GaitParams":
        return replace(self, **{vertex: vg})


@dataclass(frozen=True)
class VertexSelection:
    """Role -> coordinate index map plus stance limb lengths."""

    roles: dict
    r_sk: float
    r_sa: float
    s_outputs: tuple[str, ...]  # names among ("vhip",) + Y2_NAMES

    def maps(self, n: int):
        """(c1, k, C2): hip-velocity row, phase row, stacked y2 rows."""
        r = self.roles
        c1 = np.zeros(n)
        c1[r["sk"]] += self.r_sk + self.r_sa
        c1[r["sa"]] += self.r_sa
        C2 = np.zeros((5, n))
        C2[0, r["sk"]] = -1.0
        C2[0, r["sa"]] = -1.0
        C2[1, r["sh"]] = -1.0
        C2[2, r["nsh"]] = -1.0
        C2[3, r["nsk"]] = 1.0
        C2[4, r["nsa"]] = 1.0
        return c1, c1.copy(), C2


def hip_progress(theta, sel: VertexSelection) -> float:
    """Linearized stance-hip forward position."""
    r = sel.roles
    return (sel.r_sk + sel.r_sa) * theta[r["sk"]] + sel.r_sa * theta[r["sa"]]


def phase_variable(theta, theta_d, theta_dd, vg: VertexGait, sel: VertexSelection) -> TimePhase:
    span = vg.dp_minus - vg.dp_plus
    if span == 0:
        raise GaitError("degenerate phase bounds")
    tau = (hip_progress(theta, sel) - vg.dp_plus) / span
    tau_d = hip_progress(theta_d, sel) / span
    tau_dd = hip_progress(theta_dd, sel) / span if theta_dd is not None else 0.0
    return TimePhase(float(tau), float(tau_d), float(tau_dd))


def actual_outputs(theta, theta_d, sel: VertexSelection):
    r = sel.roles
    y1 = (sel.r_sk + sel.r_sa) * theta_d[r["sk"]] + sel.r_sa * theta_d[r["sa"]]
    y2 = np.array(
        [
            -theta[r["sk"]] - theta[r["sa"]],
            -theta[r["sh"]],
            -theta[r["nsh"]],
            theta[r["nsk"]],
            theta[r["nsa"]],
        ]
    )
    return float(y1), y2


@dataclass
class VirtualConstraints:
    y1: float
    y2: np.ndarray
    y2_d: np.ndarray
    ff1: float  # desired d/dt of the degree-1 output
    ff2: np.ndarray  # desired d2/dt2 of the degree-2 outputs


def virtual_constraints(theta, theta_d, vg: VertexGait, sel: VertexSelection, phase: TimePhase) -> VirtualConstraints:
    y1a, y2a = actual_outputs(theta, theta_d, sel)
    _, y2a_d = actual_outputs(theta_d, theta_d, sel)
    yd = bezier_eval(vg.alpha, phase.tau, 0)
    d1 = bezier_eval(vg.alpha, phase.tau, 1)
    d2 = bezier_eval(vg.alpha, phase.tau, 2)
    return VirtualConstraints(
        y1=y1a - vg.v_hip,
        y2=y2a - yd,
        y2_d=y2a_d - d1 * phase.tau_d,
        ff1=0.0,
        ff2=d2 * phase.tau_d**2 + d1 * phase.tau_dd,
    )


def boundary_match(vg: VertexGait, theta, theta_d, sel: VertexSelection) -> VertexGait:
    """Re-anchor the first two Bezier coefficients on a post-impact state.

    The phase origin moves to the post-impact hip progress (tau+ = 0), then
    alpha[:, 0] = y2a and alpha[:, 1] = alpha[:, 0] + y2a_dot / (6 tau_dot+),
    so y2 = 0 and y2_dot = 0 at the start of the step.
    """
    dp_plus = hip_progress(theta, sel)
    span = vg.dp_minus - dp_plus
    if span == 0:
        raise GaitError("post-impact hip progress coincides with the step end")
    tau_d = hip_progress(theta_d, sel) / span
    if not tau_d > 0:
        raise GaitError(f"phase not advancing after impact (tau_dot = {tau_d:.3e})")
    _, y2a = actual_outputs(theta, theta_d, sel)
    _, y2a_d = actual_outputs(theta_d, theta_d, sel)
    alpha = np.array(vg.alpha)
    alpha[:, 0] = y2a
    alpha[:, 1] = y2a + y2a_d / (6.0 * tau_d)
    return VertexGait(alpha, vg.v_hip, float(dp_plus), vg.dp_minus)


def seed_vertex(stance_shank, beta, step_time, thigh_tail=(0.0, 0.5, 0.35, 0.25, 0.17), knee_mid=(1.2, 0.6, -0.2)) -> VertexGait:
    """Hand-seeded step written directly in Bezier coefficients.

    Stance knee straight and torso upright, so the stance rows are linear
    in tau: the stance leg rotates from +beta to -beta about its foot.  The
    swing thigh starts at -beta with zero rate, swings forward through
    `thigh_tail` and is still retracting when the straight swing leg meets
    the ground shortly before tau = 1.  The foot then arrives with almost
    no horizontal velocity and the impact barely bends the new stance knee.
    The swing knee flexes through `knee_mid` and is straight at both ends;
    a negative last entry makes it still extending when the foot lands,
    which offsets the knee flexion the impact imparts and keeps the phase
    rate positive afterwards.  The swing foot is kept level.
    """
    lin = beta * (1.0 - 2.0 * np.arange(BEZIER_ORDER + 1) / BEZIER_ORDER)
    thigh = np.array([-beta, -beta, *thigh_tail])
    knee = -np.array([0.0, 0.0, *knee_mid, 0.0, 0.0])
    alpha = np.stack([lin, -lin, -thigh, knee, -(thigh + knee)])
    dp_plus, dp_minus = -stance_shank * beta, stance_shank * beta
    return VertexGait(alpha, (dp_minus - dp_plus) / step_time, dp_plus, dp_minus)


# -- gait file ------------------------------------------------------------------


def gait_to_dict(gait: GaitParams) -> dict:
    out = {}
    for v in VERTICES:
        vg = gait[v]
        out[v] = {
            "v_hip": float(vg.v_hip),
            "dp_plus": float(vg.dp_plus),
            "dp_minus": float(vg.dp_minus),
            "alpha": {name: [float(a) for a in row] for name, row in zip(Y2_NAMES, vg.alpha)},
        }
    return out


def gait_from_dict(data: dict) -> GaitParams:
    try:
        verts = {}
        for v in VERTICES:
            d = data[v]
            alpha = np.array([d["alpha"][name] for name in Y2_NAMES], dtype=float)
            verts[v] = VertexGait(alpha, float(d["v_hip"]), float(d["dp_plus"]), float(d["dp_minus"]))
        return GaitParams(**verts)
    except (KeyError, TypeError) as exc:
        raise GaitError(f"malformed gait description: {exc}") from exc


def load_gait(path) -> GaitParams:
    return gait_from_dict(read_versioned(path, GAIT_HEADER))


def save_gait(path, gait: GaitParams, notes: str | None = None):
    data = gait_to_dict(gait)
    if notes:
        data["provenance"] = notes
    write_versioned(path, GAIT_HEADER, data)


def gait_refine(hybrid, gait0: GaitParams, x0, budget: int, seed: int = 0, vertices=VERTICES):
    """Derivative-free local search on the free Bezier coefficients and v_hip.

    Minimizes the Poincare residual of `hybrid` (a WalkingSystem) with
    Nelder-Mead; returns the best gait found within `budget` residual
    evaluations (never worse than gait0).
    """
    from scipy.optimize import minimize

    from .hybrid import HybridError, poincare_residual

    if budget <= 0:
        return gait0, None

    def unpack(z):
        g = gait0
        k = 0
        for v in vertices:
            vg = g[v]
            alpha = np.array(vg.alpha)
            alpha[:, 2:] = z[k : k + 25].reshape(5, 5)
            g = g.with_vertex(v, VertexGait(alpha, float(z[k + 25]), vg.dp_plus, vg.dp_minus))
            k += 26
        return g

    z0 = np.concatenate([np.concatenate([gait0[v].alpha[:, 2:].ravel(), [gait0[v].v_hip]]) for v in vertices])

    def cost(z):
        try:
            return poincare_residual(hybrid.with_gait(unpack(z)), x0)
        except (HybridError, np.linalg.LinAlgError, GaitError):
            return np.inf

    best = [cost(z0), z0]
    if not np.isfinite(best[0]):
        raise GaitError("initial gait does not complete two cycles")
    if budget == 1:
        return gait0, best[0]

    def tracked(z):
        c = cost(z)
        if c < best[0]:
            best[:] = [c, np.array(z)]
        return c

    rng = np.random.default_rng(seed)
    simplex = [z0] + [z0 + np.where(np.arange(len(z0)) == i, 0.02 * (1 + abs(z0[i])) * rng.choice([-1, 1]), 0.0) for i in range(len(z0))]
    minimize(tracked, z0, method="Nelder-Mead", options={"maxfev": budget - 1, "initial_simplex": np.array(simplex), "xatol": 1e-9, "fatol": 1e-12})
    return unpack(best[1]), best[0]
