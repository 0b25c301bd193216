"""Amputee-prosthesis full model, the equivalent prosthesis subsystem, and the
measurement map from full state to what the prosthesis can sense.

Full coordinates (12):
    B_x, B_z, B_phi      torso pose (the torso hangs from its top down to the hips)
    lh, lk, la           intact left hip, knee, ankle
    rh                   right (residual) hip
    f_x, f_z, f_phi      socket weld, pinned to zero by a 3-row constraint
    pk, pa               prosthesis knee, ankle
Subsystem coordinates (5): Bbar_x, Bbar_z, Bbar_phi (socket frame), pk, pa.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fileio import read_versioned, write_versioned
from .gait import VertexSelection
from .multibody import (
    ConstraintSet,
    GroundContact,
    Joint,
    LinkParams,
    ModelError,
    RobotModel,
    SocketFixed,
    forward_kinematics,
    frame_jacobian,
    model_from_dict,
    rot2,
)

MODEL_HEADER = "sepsim-model v1"
SEGMENTS = ("thigh", "shank", "foot", "torso")

# Literature-style approximations (fractions of body mass / height, COM and
# gyration radius as fractions of segment length).  Not exact table values.
DEFAULT_TABLE = {
    "thigh": {"mass": 0.1000, "length": 0.245, "com": 0.433, "gyration": 0.323},
    "shank": {"mass": 0.0465, "length": 0.246, "com": 0.433, "gyration": 0.302},
    "foot": {"mass": 0.0145, "length": 0.039, "com": 0.500, "gyration": 0.475},
    "torso": {"mass": 0.6780, "length": 0.470, "com": 0.374, "gyration": 0.496},
}

# AMPRO3-like magnitudes (total about 5 kg); approximate.
DEFAULT_PROSTHESIS = {
    "socket": {"mass": 2.0, "length": 0.19, "com_offset": 0.08, "inertia": 0.010},
    "shank": {"mass": 2.2, "length": 0.426, "com_offset": 0.16, "inertia": 0.035},
    "foot": {"mass": 0.8, "length": 0.067, "com_offset": 0.03, "inertia": 0.002},
}

ACTUATED = ("lh", "lk", "la", "rh", "pk", "pa")
S_COORDS = ("pk", "pa")


@dataclass(frozen=True)
class AnthropometricTable:
    segments: dict

    def __post_init__(self):
        for seg, row in self.segments.items():
            for key in ("mass", "length", "com", "gyration"):
                val = row[key]
                if not 0.0 < val < 1.0:
                    raise ModelError(f"table fraction {seg}.{key} = {val} outside (0, 1)")

    @classmethod
    def default(cls) -> "AnthropometricTable":
        return cls({k: dict(v) for k, v in DEFAULT_TABLE.items()})


def anthropometrics(height: float, mass: float, table: AnthropometricTable) -> dict[str, LinkParams]:
    if not (height > 0 and mass > 0):
        raise ModelError("height and mass must be positive")
    out = {}
    for seg in SEGMENTS:
        if seg not in table.segments:
            raise ModelError(f"anthropometric table lacks segment {seg!r}")
        row = table.segments[seg]
        m = row["mass"] * mass
        length = row["length"] * height
        out[seg] = LinkParams(m, length, row["com"] * length, m * (row["gyration"] * length) ** 2)
    return out


@dataclass(frozen=True)
class HumanParams:
    """Human segments for a unilateral transfemoral amputee."""

    torso: LinkParams
    thigh: LinkParams
    shank: LinkParams
    foot: LinkParams
    residual_thigh: LinkParams

    @classmethod
    def from_body(cls, height, mass, table=None, residual_fraction=0.55):
        seg = anthropometrics(height, mass, table or AnthropometricTable.default())
        th = seg["thigh"]
        r = residual_fraction
        residual = LinkParams(th.mass * r, th.length * r, min(th.com_offset, th.length * r) * 1.0, th.inertia * r**3)
        return cls(seg["torso"], th, seg["shank"], seg["foot"], residual)

    @property
    def total_mass(self) -> float:
        return self.torso.mass + self.thigh.mass + self.shank.mass + self.foot.mass + self.residual_thigh.mass

    def add_mass(self, delta: float) -> "HumanParams":
        """Scale every human segment so the total changes by `delta` kg."""
        total = self.total_mass
        if total + delta <= 0:
            raise ModelError(f"mass change {delta} kg would leave non-positive human mass")
        k = (total + delta) / total
        return HumanParams(*(getattr(self, f).scaled(k) for f in ("torso", "thigh", "shank", "foot", "residual_thigh")))


@dataclass(frozen=True)
class ProsthesisParams:
    socket: LinkParams
    shank: LinkParams
    foot: LinkParams

    @classmethod
    def from_dict(cls, d: dict) -> "ProsthesisParams":
        return cls(*(LinkParams(**d[k]) for k in ("socket", "shank", "foot")))

    @property
    def total_mass(self) -> float:
        return self.socket.mass + self.shank.mass + self.foot.mass


@dataclass(frozen=True)
class FullModelLayout:
    index: dict
    actuated: tuple[str, ...] = ACTUATED
    socket_frames: tuple[str, str] = ("rthigh_end", "socket")
    n_fixed: int = 3

    @property
    def s_coords(self) -> list[int]:
        return [self.index[c] for c in S_COORDS]


@dataclass(frozen=True)
class SubsystemLayout:
    index: dict
    base: tuple[int, int, int] = (0, 1, 2)
    s_coords: tuple[int, int] = (3, 4)
    wrench_dim: int = 3


def fixed_joint_dof(space_dim: int) -> int:
    return space_dim * (space_dim + 1) // 2


def build_full_model(human: HumanParams, prosthesis: ProsthesisParams, gravity=9.81, gear=1.0):
    links = [
        ("torso", human.torso),
        ("lthigh", human.thigh),
        ("lshank", human.shank),
        ("lfoot", human.foot),
        ("rthigh", human.residual_thigh),
        ("socket", prosthesis.socket),
        ("pshank", prosthesis.shank),
        ("pfoot", prosthesis.foot),
    ]
    joints = [
        Joint("B", "planar-base"),
        Joint("lh", "revolute", "torso"),
        Joint("lk", "revolute", "lthigh"),
        Joint("la", "revolute", "lshank"),
        Joint("rh", "revolute", "torso"),
        Joint("f", "fixed-3dof", "rthigh"),
        Joint("pk", "revolute", "socket"),
        Joint("pa", "revolute", "pshank"),
    ]
    model = RobotModel(links, joints, [{c: gear} for c in ACTUATED], gravity)
    layout = FullModelLayout(dict(model.coord_index))
    expected = ["B_x", "B_z", "B_phi", "lh", "lk", "la", "rh", "f_x", "f_z", "f_phi", "pk", "pa"]
    if model.coord_names != expected:
        raise ModelError("inconsistent full-model layout")
    if model.n - 6 != model.m:
        raise ModelError("DOF audit failed")
    return model, layout


def build_subsystem_model(prosthesis: ProsthesisParams, gravity=9.81, gear=1.0):
    links = [("socket", prosthesis.socket), ("pshank", prosthesis.shank), ("pfoot", prosthesis.foot)]
    joints = [Joint("Bbar", "planar-base"), Joint("pk", "revolute", "socket"), Joint("pa", "revolute", "pshank")]
    model = RobotModel(links, joints, [{"pk": gear}, {"pa": gear}], gravity)
    return model, SubsystemLayout(dict(model.coord_index))


def socket_wrench_force(qbar, wrench) -> np.ndarray:
    """Generalized force of a socket-frame wrench on the subsystem coordinates.

    Equals Jbar_f^T F_f with Jbar_f = R_Wf(theta_B) [I 0]: the force part is
    rotated into the world frame, the moment passes through unchanged.
    """
    out = np.zeros(len(qbar))
    out[:2] = rot2(qbar[2]) @ np.asarray(wrench[:2], dtype=float)
    out[2] = wrench[2]
    return out


# measured-state layout
X_BASE = slice(0, 3)
X_BASE_D = slice(3, 6)
X_S = slice(6, 10)
X_F = slice(10, 13)
AUG_DIM = 13


@dataclass
class AmputeeSystem:
    """Full and subsystem models with their constraint sets and selections."""

    human: HumanParams
    prosthesis: ProsthesisParams
    gravity: float = 9.81
    full: RobotModel = field(init=False)
    layout: FullModelLayout = field(init=False)
    sub: RobotModel = field(init=False)
    sub_layout: SubsystemLayout = field(init=False)

    STANCE_FOOT = {"pt": "pfoot_end", "pw": "lfoot_end"}
    SWING_FOOT = {"pt": "lfoot_end", "pw": "pfoot_end"}

    def __post_init__(self):
        self.full, self.layout = build_full_model(self.human, self.prosthesis, self.gravity)
        self.sub, self.sub_layout = build_subsystem_model(self.prosthesis, self.gravity)
        idx = self.layout.index
        self.s_idx = [idx["pk"], idx["pa"]]
        n = self.full.n
        self.xs_idx = self.s_idx + [n + i for i in self.s_idx]
        self.selection = {
            "pt": VertexSelection(
                {"sh": idx["rh"], "sk": idx["pk"], "sa": idx["pa"], "nsh": idx["lh"], "nsk": idx["lk"], "nsa": idx["la"]},
                self.human.residual_thigh.length + self.prosthesis.socket.length,
                self.prosthesis.shank.length,
                ("vhip", "sc"),
            ),
            "pw": VertexSelection(
                {"sh": idx["lh"], "sk": idx["lk"], "sa": idx["la"], "nsh": idx["rh"], "nsk": idx["pk"], "nsa": idx["pa"]},
                self.human.thigh.length,
                self.human.shank.length,
                ("nsk", "nsa"),
            ),
        }

    @property
    def leg_length(self) -> float:
        return self.human.thigh.length + self.human.shank.length + self.human.foot.length

    def with_human(self, human: HumanParams) -> "AmputeeSystem":
        return AmputeeSystem(human, self.prosthesis, self.gravity)

    # -- constraint sets ----------------------------------------------------

    def socket_constraint(self) -> SocketFixed:
        return SocketFixed(*self.layout.socket_frames)

    def constraints(self, vertex: str, q) -> ConstraintSet:
        """Stance-foot contact (rows 0:3) followed by the socket weld (rows 3:6)."""
        foot = self.STANCE_FOOT[vertex]
        target = tuple(float(v) for v in forward_kinematics(self.full, foot, q))
        return ConstraintSet([GroundContact(foot, target), self.socket_constraint()])

    socket_rows = slice(3, 6)

    def sub_constraints(self, vertex: str, qbar) -> ConstraintSet:
        if vertex == "pt":
            target = tuple(float(v) for v in forward_kinematics(self.sub, "pfoot_end", qbar))
            return ConstraintSet([GroundContact("pfoot_end", target)])
        return ConstraintSet()

    # -- measurement map ------------------------------------------------------

    def iota_f(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if F.shape[0] < self.socket_rows.stop:
            raise ModelError("constraint wrench lacks socket rows")
        return F[self.socket_rows].copy()

    def measurement_transform(self, x, F) -> np.ndarray:
        """T(x) = (g_Wf(theta), J_Wf(theta) theta_dot, x_s, iota_f(F))."""
        n = self.full.n
        q, qd = x[:n], x[n:]
        frame = self.layout.socket_frames[1]
        X = np.empty(AUG_DIM)
        X[X_BASE] = forward_kinematics(self.full, frame, q)
        X[X_BASE_D] = frame_jacobian(self.full, frame, q) @ qd
        X[X_S] = x[self.xs_idx]
        X[X_F] = self.iota_f(F)
        return X

    @staticmethod
    def sub_state(X):
        """(qbar, qbar_dot, wrench) from an augmented measured state."""
        qbar = np.concatenate([X[X_BASE], X[X_S][:2]])
        qbar_d = np.concatenate([X[X_BASE_D], X[X_S][2:]])
        return qbar, qbar_d, X[X_F]


# -- model config ---------------------------------------------------------------


def amputee_from_dict(data: dict) -> AmputeeSystem:
    if data.get("kind") != "amputee":
        raise ModelError("model file is not an amputee description")
    try:
        h = data["human"]
        table = AnthropometricTable(h["table"]) if "table" in h else AnthropometricTable.default()
        human = HumanParams.from_body(h["height"], h["mass"], table, h.get("residual_fraction", 0.55))
        if h.get("mass_delta"):
            human = human.add_mass(float(h["mass_delta"]))
        pros = ProsthesisParams.from_dict(data["prosthesis"])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed amputee description: {exc}") from exc
    return AmputeeSystem(human, pros, float(data.get("gravity", 9.81)))


def default_model_dict(height=1.73, mass=65.8, mass_delta=0.0) -> dict:
    return {
        "kind": "amputee",
        "gravity": 9.81,
        "human": {
            "height": height,
            "mass": mass,
            "mass_delta": mass_delta,
            "residual_fraction": 0.55,
            "table": {k: dict(v) for k, v in DEFAULT_TABLE.items()},
        },
        "prosthesis": {k: dict(v) for k, v in DEFAULT_PROSTHESIS.items()},
        "notes": "anthropometric fractions and prosthesis parameters are approximate defaults",
    }


def load_model(path):
    data = read_versioned(path, MODEL_HEADER)
    if data.get("kind") == "chain":
        return model_from_dict(data)
    return amputee_from_dict(data)


def save_model(path, data: dict):
    write_versioned(path, MODEL_HEADER, data)
