"""Planar rigid-body chain dynamics.

Conventions: at theta = 0 every link hangs along -z from its proximal joint,
angles are counterclockwise about the out-of-plane axis, and a planar pose is
(x, z, phi).  Dynamics follow

    D(theta) theta_dd + H(theta, theta_d) = B u + J^T F

with holonomic constraints J theta_dd + Jdot theta_d = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

JOINT_KINDS = ("planar-base", "revolute", "fixed-3dof")

# coordinate kinds
_BASE_X, _BASE_Z, _ROT, _FIX_X, _FIX_Z = range(5)

RANK_RTOL = 1e-10


class ModelError(ValueError):
    """Malformed model description or dimension mismatch."""


class RankDeficiencyError(np.linalg.LinAlgError):
    """Constraint Jacobian (or a derived block) lost row rank."""


@dataclass(frozen=True)
class LinkParams:
    mass: float
    length: float
    com_offset: float
    inertia: float

    def __post_init__(self):
        if not self.mass > 0:
            raise ModelError(f"link mass must be positive, got {self.mass}")
        if not self.length > 0:
            raise ModelError(f"link length must be positive, got {self.length}")
        if not 0.0 <= self.com_offset <= self.length:
            raise ModelError("com_offset must lie in [0, length]")
        if self.inertia < 0:
            raise ModelError("inertia must be non-negative")

    def scaled(self, mass_factor: float) -> "LinkParams":
        return LinkParams(self.mass * mass_factor, self.length, self.com_offset, self.inertia * mass_factor)


@dataclass(frozen=True)
class Joint:
    """Joint connecting link `name` to its parent link.

    `offset` is the attachment point in the parent's local frame; it defaults
    to the parent's distal end (0, -length).
    """

    name: str
    kind: str
    parent: str | None = None
    offset: tuple[float, float] | None = None


def rot2(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _perp(v: np.ndarray) -> np.ndarray:
    """Rotate planar vectors (..., 2) by +90 degrees."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


class RobotModel:
    """Immutable planar kinematic tree.

    Links and joints are given in topological order (parents first); link i
    is attached through joint i.  `actuation` lists, per actuator column, a
    mapping {coordinate name: gear ratio}.
    """

    def __init__(
        self,
        links: Sequence[tuple[str, LinkParams]],
        joints: Sequence[Joint],
        actuation: Sequence[dict[str, float]],
        gravity: float = 9.81,
        frames: dict[str, tuple[str, tuple[float, float]]] | None = None,
    ):
        if len(links) != len(joints):
            raise ModelError("one joint per link required")
        self.link_names = [n for n, _ in links]
        self.links = [p for _, p in links]
        self.joints = list(joints)
        self.gravity = float(gravity)
        index = {n: i for i, n in enumerate(self.link_names)}
        if len(index) != len(self.link_names):
            raise ModelError("duplicate link names")

        n_base = sum(j.kind == "planar-base" for j in self.joints)
        if n_base != 1 or self.joints[0].kind != "planar-base" or self.joints[0].parent is not None:
            raise ModelError("exactly one planar-base joint is required, at the tree root")

        parent_idx, offsets, coord_names = [], [], []
        kinds, cbody, cparent = [], [], []
        joint_coords = []
        for i, (jnt, name) in enumerate(zip(self.joints, self.link_names)):
            if jnt.kind not in JOINT_KINDS:
                raise ModelError(f"unknown joint kind {jnt.kind!r}")
            if jnt.kind == "planar-base":
                p = -1
                off = (0.0, 0.0)
            else:
                if jnt.parent not in index or index[jnt.parent] >= i:
                    raise ModelError(f"joint {jnt.name}: parent {jnt.parent!r} must precede it")
                p = index[jnt.parent]
                off = jnt.offset if jnt.offset is not None else (0.0, -self.links[p].length)
            parent_idx.append(p)
            offsets.append(off)
            start = len(coord_names)
            if jnt.kind == "revolute":
                coord_names.append(jnt.name)
                kinds.append(_ROT)
                cbody.append(i)
                cparent.append(p)
            else:
                coord_names += [f"{jnt.name}_x", f"{jnt.name}_z", f"{jnt.name}_phi"]
                if jnt.kind == "planar-base":
                    kinds += [_BASE_X, _BASE_Z, _ROT]
                else:
                    kinds += [_FIX_X, _FIX_Z, _ROT]
                cbody += [i, i, i]
                cparent += [p, p, p]
            joint_coords.append(list(range(start, len(coord_names))))

        self.parent_idx = np.array(parent_idx)
        self.offsets = np.array(offsets, dtype=float)
        self.coord_names = coord_names
        self.coord_index = {n: k for k, n in enumerate(coord_names)}
        self.joint_coords = joint_coords
        self.joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self.body_index = index
        self.n = len(coord_names)
        nb = len(self.links)
        self._kind = np.array(kinds)
        self._cbody = np.array(cbody)
        self._cparent = np.array(cparent)

        anc = np.zeros((nb, self.n), dtype=bool)
        for b in range(nb):
            k = b
            while k >= 0:
                anc[b, joint_coords[k]] = True
                k = parent_idx[k]
        self._anc = anc
        self._rot = self._kind == _ROT
        self._fix = (self._kind == _FIX_X) | (self._kind == _FIX_Z)
        self.Wphi = (anc & self._rot[None, :]).astype(float)

        self.mass = np.array([lk.mass for lk in self.links])
        self.inertia = np.array([lk.inertia for lk in self.links])
        self._com_local = np.array([[0.0, -lk.com_offset] for lk in self.links])
        self._rot_inertia = self.Wphi.T @ (self.inertia[:, None] * self.Wphi)

        B = np.zeros((self.n, len(actuation)))
        for col, entries in enumerate(actuation):
            for cname, ratio in entries.items():
                if cname not in self.coord_index:
                    raise ModelError(f"actuation refers to unknown coordinate {cname!r}")
                B[self.coord_index[cname], col] = ratio
        if B.shape[1] and np.linalg.matrix_rank(B) != B.shape[1]:
            raise ModelError("actuation map must have full column rank")
        self.B = B
        self.B.setflags(write=False)
        self.m = B.shape[1]
        self.actuation = [dict(a) for a in actuation]

        self.frames: dict[str, tuple[int, np.ndarray]] = {}
        for i, (name, lk) in enumerate(zip(self.link_names, self.links)):
            self.frames[name] = (i, np.zeros(2))
            self.frames[f"{name}_end"] = (i, np.array([0.0, -lk.length]))
            self.frames[f"{name}_com"] = (i, np.array([0.0, -lk.com_offset]))
        for fname, (lname, local) in (frames or {}).items():
            if lname not in index:
                raise ModelError(f"frame {fname!r} on unknown link {lname!r}")
            self.frames[fname] = (index[lname], np.asarray(local, dtype=float))

    # -- kinematics ---------------------------------------------------------

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise ModelError(f"expected coordinate vector of length {self.n}, got shape {q.shape}")
        return q

    def _frame(self, frame: str) -> tuple[int, np.ndarray]:
        try:
            return self.frames[frame]
        except KeyError:
            raise KeyError(f"unknown frame {frame!r}") from None

    def _origins(self, q: np.ndarray, phi: np.ndarray) -> np.ndarray:
        o = np.empty((len(self.links), 2))
        for i, jnt in enumerate(self.joints):
            c = self.joint_coords[i]
            if jnt.kind == "planar-base":
                o[i] = q[c[0]], q[c[1]]
                continue
            p = self.parent_idx[i]
            off = self.offsets[i]
            if jnt.kind == "fixed-3dof":
                off = off + q[c[:2]]
            cp, sp = np.cos(phi[p]), np.sin(phi[p])
            o[i, 0] = o[p, 0] + cp * off[0] - sp * off[1]
            o[i, 1] = o[p, 1] + sp * off[0] + cp * off[1]
        return o

    def _kin(self, q, qd, bodies, local, with_bias=True):
        """Positions, Jacobians and velocity-product accelerations of points.

        Returns (P, Jv, Pd, acc) where acc = Jvdot @ qd; Pd and acc are None
        when qd is None.
        """
        phi = self.Wphi @ q
        o = self._origins(q, phi)
        pb = phi[bodies]
        c, s = np.cos(pb), np.sin(pb)
        P = o[bodies] + np.stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1]], axis=1)
        Jv, Rcol = self._jac(P, bodies, o, phi)
        if qd is None:
            return P, Jv, None, None, None
        Pd = Jv @ qd
        if not with_bias:
            return P, Jv, Pd, None, None
        # origin velocities are needed for rotational-column derivatives
        all_b = np.arange(len(self.links))
        Jo, _ = self._jac(o, all_b, o, phi)
        od = Jo @ qd
        omega = self.Wphi @ qd
        Jdot = np.zeros_like(Jv)
        rot = self._rot
        dv = Pd[:, None, :] - od[self._cbody[rot]][None, :, :]
        mask = self._anc[bodies][:, rot]
        Jdot[:, :, rot] = np.transpose(_perp(dv), (0, 2, 1)) * mask[:, None, :]
        fix = self._fix
        if fix.any():
            wpar = omega[self._cparent[fix]]
            col = _perp(Rcol) * wpar[:, None]
            Jdot[:, :, fix] = col.T[None, :, :] * self._anc[bodies][:, fix][:, None, :]
        acc = Jdot @ qd
        return P, Jv, Pd, acc, Jdot

    def _jac(self, P, bodies, o, phi):
        npts = len(P)
        Jv = np.zeros((npts, 2, self.n))
        anc = self._anc[bodies]
        rot = self._rot
        d = P[:, None, :] - o[self._cbody[rot]][None, :, :]
        Jv[:, 0, rot] = -d[..., 1]
        Jv[:, 1, rot] = d[..., 0]
        Jv[:, 0, self._kind == _BASE_X] = 1.0
        Jv[:, 1, self._kind == _BASE_Z] = 1.0
        fix = self._fix
        Rcol = None
        if fix.any():
            pp = phi[self._cparent[fix]]
            cp, sp = np.cos(pp), np.sin(pp)
            isx = self._kind[fix] == _FIX_X
            Rcol = np.where(isx[:, None], np.stack([cp, sp], 1), np.stack([-sp, cp], 1))
            Jv[:, :, fix] = Rcol.T[None, :, :]
        Jv *= anc[:, None, :]
        return Jv, Rcol

    def _coms(self, q, qd=None, with_bias=True):
        bodies = np.arange(len(self.links))
        return self._kin(q, qd, bodies, self._com_local, with_bias)


def _as_state(model: RobotModel, q, qd=None):
    q = model._check_q(q)
    if qd is None:
        return q
    return q, model._check_q(qd)


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    q = _as_state(model, q)
    _, Jv, *_ = model._coms(q)
    D = np.einsum("bip,b,biq->pq", Jv, model.mass, Jv) + model._rot_inertia
    return 0.5 * (D + D.T)


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    q = _as_state(model, q)
    _, Jv, *_ = model._coms(q)
    return model.gravity * (model.mass @ Jv[:, 1, :])


def _dyn_terms(model: RobotModel, q, qd):
    _, Jv, _, acc, _ = model._coms(q, qd)
    D = np.einsum("bip,b,biq->pq", Jv, model.mass, Jv) + model._rot_inertia
    D = 0.5 * (D + D.T)
    H = np.einsum("bip,b,bi->p", Jv, model.mass, acc) + model.gravity * (model.mass @ Jv[:, 1, :])
    return D, H


def bias_forces(model: RobotModel, q, qd) -> np.ndarray:
    """H(q, qd) = C(q, qd) qd + G(q)."""
    q, qd = _as_state(model, q, qd)
    return _dyn_terms(model, q, qd)[1]


def coriolis_matrix(model: RobotModel, q, qd) -> np.ndarray:
    """C with Ddot - 2C skew-symmetric: C = sum_i m_i Jv_i^T Jvdot_i."""
    q, qd = _as_state(model, q, qd)
    _, Jv, _, _, Jdot = model._coms(q, qd)
    return np.einsum("bip,b,biq->pq", Jv, model.mass, Jdot)


def forward_kinematics(model: RobotModel, frame: str, q) -> np.ndarray:
    """World pose (x, z, phi) of a frame origin."""
    q = _as_state(model, q)
    b, local = model._frame(frame)
    P, *_ = model._kin(q, None, np.array([b]), local[None, :])
    return np.array([P[0, 0], P[0, 1], model.Wphi[b] @ q])


def frame_jacobian(model: RobotModel, frame: str, q) -> np.ndarray:
    q = _as_state(model, q)
    b, local = model._frame(frame)
    _, Jv, *_ = model._kin(q, None, np.array([b]), local[None, :])
    return np.vstack([Jv[0], model.Wphi[b]])


def frame_kinematics(model: RobotModel, frame: str, q, qd):
    """Pose, Jacobian, velocity and velocity-product acceleration of a frame."""
    b, local = model._frame(frame)
    P, Jv, Pd, acc, _ = model._kin(q, qd, np.array([b]), local[None, :])
    pose = np.array([P[0, 0], P[0, 1], model.Wphi[b] @ q])
    J = np.vstack([Jv[0], model.Wphi[b]])
    return pose, J, J @ qd, np.array([acc[0, 0], acc[0, 1], 0.0])


def frames_kinematics(model: RobotModel, frames, q, qd) -> dict:
    """frame_kinematics for several frames from a single kinematic sweep."""
    frames = list(dict.fromkeys(frames))
    info = [model._frame(f) for f in frames]
    bodies = np.array([b for b, _ in info])
    local = np.array([loc for _, loc in info])
    P, Jv, _, acc, _ = model._kin(q, qd, bodies, local)
    out = {}
    for k, f in enumerate(frames):
        w = model.Wphi[bodies[k]]
        J = np.vstack([Jv[k], w])
        out[f] = (np.array([P[k, 0], P[k, 1], w @ q]), J, J @ qd, np.array([acc[k, 0], acc[k, 1], 0.0]))
    return out


def energy(model: RobotModel, q, qd) -> tuple[float, float]:
    q, qd = _as_state(model, q, qd)
    P, Jv, Pd, _, _ = model._coms(q, qd, with_bias=False)
    D = np.einsum("bip,b,biq->pq", Jv, model.mass, Jv) + model._rot_inertia
    kinetic = 0.5 * qd @ D @ qd
    potential = model.gravity * float(model.mass @ P[:, 1])
    return float(kinetic), potential


# -- constraints --------------------------------------------------------------


@dataclass(frozen=True)
class GroundContact:
    """Flat-foot contact pinning (x, z, phi) of a frame to `target`."""

    frame: str
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rows: int = field(default=3, init=False)

    def residual(self, model, q):
        return forward_kinematics(model, self.frame, q) - np.asarray(self.target)

    @property
    def frames(self):
        return (self.frame,)

    def data(self, model, q, qd, kin=None):
        _, J, _, acc = kin[self.frame] if kin else frame_kinematics(model, self.frame, q, qd)
        return J, acc


@dataclass(frozen=True)
class SocketFixed:
    """Weld of `child` to `parent`, with rows expressed in the parent frame.

    h = (R(phi_p)^T (p_c - p_p), phi_c - phi_p) - target; its multiplier is
    the wrench transmitted through the weld in socket coordinates.
    """

    parent: str
    child: str
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rows: int = field(default=3, init=False)

    def residual(self, model, q):
        a = forward_kinematics(model, self.parent, q)
        b = forward_kinematics(model, self.child, q)
        d = rot2(a[2]).T @ (b[:2] - a[:2])
        return np.array([d[0], d[1], b[2] - a[2]]) - np.asarray(self.target)

    @property
    def frames(self):
        return (self.parent, self.child)

    def data(self, model, q, qd, kin=None):
        kin = kin or frames_kinematics(model, self.frames, q, qd)
        pa, Ja, va, aa = kin[self.parent]
        pb, Jb, vb, ab = kin[self.child]
        Rt = rot2(pa[2]).T
        dp, dv, da = pb[:2] - pa[:2], vb[:2] - va[:2], ab[:2] - aa[:2]
        w = va[2]
        S = np.array([[0.0, -1.0], [1.0, 0.0]])
        J = np.empty((3, model.n))
        J[:2] = Rt @ (Jb[:2] - Ja[:2]) - np.outer(Rt @ S @ dp, Ja[2])
        J[2] = Jb[2] - Ja[2]
        bias = np.empty(3)
        bias[:2] = Rt @ (da - 2.0 * w * (S @ dv) - w * w * dp)
        bias[2] = 0.0
        return J, bias


class ConstraintSet(tuple):
    """Ordered tuple of constraints; rows are stacked in order."""

    def __new__(cls, items=()):
        return super().__new__(cls, items)

    @property
    def rows(self) -> int:
        return sum(c.rows for c in self)

    def row_slice(self, k: int) -> slice:
        start = sum(c.rows for c in self[:k])
        return slice(start, start + self[k].rows)

    def residual(self, model, q) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([c.residual(model, q) for c in self])


def constraint_data(model: RobotModel, constraints: ConstraintSet, q, qd, check_rank=True):
    """Stacked Jacobian J and drift Jdot qd."""
    q, qd = _as_state(model, q, qd)
    if not constraints:
        return np.zeros((0, model.n)), np.zeros(0)
    kin = frames_kinematics(model, [f for c in constraints for f in c.frames], q, qd)
    parts = [c.data(model, q, qd, kin) for c in constraints]
    J = np.vstack([p[0] for p in parts])
    bias = np.concatenate([p[1] for p in parts])
    if check_rank:
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= RANK_RTOL * sv[0]:
            raise RankDeficiencyError(f"constraint Jacobian rank deficient (sigma_min/sigma_max = {sv[-1] / sv[0]:.3e})")
    return J, bias


@dataclass
class WrenchSplit:
    """F(u) = lam_f + lam_g u."""

    lam_f: np.ndarray
    lam_g: np.ndarray

    def __call__(self, u) -> np.ndarray:
        return self.lam_f + self.lam_g @ np.asarray(u, dtype=float)


@dataclass
class ConstrainedDynamics:
    """Everything derived from one (q, qd) evaluation.

    qdd(u) = qdd0 + M u and F(u) = split(u).
    """

    D: np.ndarray
    H: np.ndarray
    J: np.ndarray
    Jdot_qd: np.ndarray
    split: WrenchSplit
    qdd0: np.ndarray
    M: np.ndarray
    cho: tuple

    def qdd(self, u) -> np.ndarray:
        return self.qdd0 + self.M @ np.asarray(u, dtype=float)


def constrained_dynamics(model: RobotModel, constraints, q, qd, extra_force=None) -> ConstrainedDynamics:
    """Affine-in-u constrained dynamics.

    `extra_force` is an optional generalized force added to the right-hand
    side (used for measured interface wrenches).
    """
    q, qd = _as_state(model, q, qd)
    D, H = _dyn_terms(model, q, qd)
    if extra_force is not None:
        H = H - extra_force
    try:
        cho = cho_factor(D)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("mass matrix not positive definite") from exc
    B = model.B
    DiH = cho_solve(cho, H)
    DiB = cho_solve(cho, B)
    J, Jdq = constraint_data(model, constraints, q, qd)
    if J.shape[0] == 0:
        split = WrenchSplit(np.zeros(0), np.zeros((0, model.m)))
        return ConstrainedDynamics(D, H, J, Jdq, split, -DiH, DiB, cho)
    DiJt = cho_solve(cho, J.T)
    Lam = J @ DiJt
    try:
        lcho = cho_factor(0.5 * (Lam + Lam.T))
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("J D^-1 J^T is singular") from exc
    lam_f = cho_solve(lcho, J @ DiH - Jdq)
    lam_g = -cho_solve(lcho, J @ DiB)
    qdd0 = -DiH + DiJt @ lam_f
    M = DiB + DiJt @ lam_g
    return ConstrainedDynamics(D, H, J, Jdq, WrenchSplit(lam_f, lam_g), qdd0, M, cho)


def constraint_wrench(model: RobotModel, constraints, q, qd, u):
    cd = constrained_dynamics(model, constraints, q, qd)
    return cd.split(u), cd.split


def forward_dynamics(model: RobotModel, constraints, q, qd, u) -> np.ndarray:
    return constrained_dynamics(model, constraints, q, qd).qdd(u)


def forward_dynamics_kkt(model: RobotModel, constraints, q, qd, u):
    """Solve [[D, -J^T], [J, 0]] [qdd; F] = [Bu - H; -Jdot qd] in one shot."""
    q, qd = _as_state(model, q, qd)
    D, H = _dyn_terms(model, q, qd)
    J, Jdq = constraint_data(model, constraints, q, qd)
    k = J.shape[0]
    K = np.zeros((model.n + k, model.n + k))
    K[: model.n, : model.n] = D
    K[: model.n, model.n :] = -J.T
    K[model.n :, : model.n] = J
    rhs = np.concatenate([model.B @ np.asarray(u, dtype=float) - H, -Jdq])
    sol = np.linalg.solve(K, rhs)
    return sol[: model.n], sol[model.n :]


def project_to_manifold(model: RobotModel, constraints, q, qd, tol=1e-12, max_iter=20):
    """Gauss-Newton position projection then D-weighted velocity projection."""
    q = np.array(q, dtype=float)
    for _ in range(max_iter):
        r = constraints.residual(model, q)
        if np.max(np.abs(r), initial=0.0) <= tol:
            break
        J, _ = constraint_data(model, constraints, q, np.zeros(model.n))
        q -= np.linalg.lstsq(J, r, rcond=None)[0]
    J, _ = constraint_data(model, constraints, q, np.zeros(model.n))
    D = mass_matrix(model, q)
    cho = cho_factor(D)
    DiJt = cho_solve(cho, J.T)
    qd = np.asarray(qd, dtype=float)
    qd = qd - DiJt @ np.linalg.solve(J @ DiJt, J @ qd)
    return q, qd


# -- model file (chain section) -------------------------------------------------


def model_to_dict(model: RobotModel) -> dict:
    return {
        "kind": "chain",
        "gravity": model.gravity,
        "links": [
            {
                "name": n,
                "mass": lk.mass,
                "length": lk.length,
                "com_offset": lk.com_offset,
                "inertia": lk.inertia,
                "joint": {
                    "name": j.name,
                    "kind": j.kind,
                    "parent": j.parent,
                    **({"offset": list(j.offset)} if j.offset is not None else {}),
                },
            }
            for n, lk, j in zip(model.link_names, model.links, model.joints)
        ],
        "actuation": [dict(a) for a in model.actuation],
    }


def model_from_dict(data: dict) -> RobotModel:
    try:
        links, joints = [], []
        for entry in data["links"]:
            links.append(
                (entry["name"], LinkParams(entry["mass"], entry["length"], entry.get("com_offset", 0.0), entry.get("inertia", 0.0)))
            )
            j = entry["joint"]
            off = j.get("offset")
            joints.append(Joint(j["name"], j["kind"], j.get("parent"), tuple(off) if off is not None else None))
        frames = {k: (v["link"], tuple(v["local"])) for k, v in (data.get("frames") or {}).items()}
        return RobotModel(links, joints, data.get("actuation", []), data.get("gravity", 9.81), frames)
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model description: {exc}") from exc
