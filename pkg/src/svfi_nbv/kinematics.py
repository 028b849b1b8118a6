"""Differential kinematics of a planar nonholonomic base carrying a serial arm.

The configuration vector is ``q = [x, y, phi, q_arm...]``. The base frame sits
on the floor at ``(x, y, 0)`` rotated by ``phi`` about world z; the arm root
is attached through a fixed mount transform. Each arm joint is revolute and
is described by a fixed translation from the previous joint frame followed by
a rotation about a joint-local axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BASE_DOF = 3


class KinematicsError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]; angles already in range come back unchanged."""
    if -np.pi < a <= np.pi:
        return a
    w = (a + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _axis_rotation(axis, angle) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class Configuration:
    base: tuple[float, float, float]
    arm: tuple[float, ...]

    @classmethod
    def from_vector(cls, q) -> "Configuration":
        q = np.asarray(q, dtype=float)
        return cls(base=(float(q[0]), float(q[1]), wrap_angle(float(q[2]))), arm=tuple(float(v) for v in q[3:]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.base, dtype=float), np.asarray(self.arm, dtype=float)])

    @property
    def n(self) -> int:
        return BASE_DOF + len(self.arm)


@dataclass(frozen=True)
class TaskVector:
    """End-effector position ``t_e`` and unit direction axis ``n_e``."""

    t_e: np.ndarray
    n_e: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.t_e, self.n_e])

    @classmethod
    def from_vector(cls, x) -> "TaskVector":
        x = np.asarray(x, dtype=float)
        return cls(t_e=x[:3].copy(), n_e=x[3:6] / np.linalg.norm(x[3:6]))


@dataclass(frozen=True)
class Attachment:
    """A point rigidly fixed to a link.

    ``link`` is -1 for the base frame, ``k`` for the frame after arm joint
    ``k`` (0-based); ``len(joints)`` denotes the tool frame.
    """

    link: int
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RobotModel:
    joint_offsets: np.ndarray  # (n_arm, 3) translation from previous frame
    joint_axes: np.ndarray  # (n_arm, 3) unit rotation axes in joint frame
    mount: np.ndarray  # 4x4 base frame -> arm root
    tool_offset: np.ndarray  # (3,) last joint frame -> end effector
    tool_axis: np.ndarray  # (3,) direction axis in tool frame
    velocity_limits: np.ndarray  # (n,) for [x, y, phi, arm...]
    joint_limits: np.ndarray  # (n_arm, 2)
    attachments: dict = field(default_factory=dict)

    def __post_init__(self):
        offs = np.asarray(self.joint_offsets, dtype=float).reshape(-1, 3)
        axes = np.asarray(self.joint_axes, dtype=float).reshape(-1, 3)
        if offs.shape[0] < 1 or offs.shape != axes.shape:
            raise KinematicsError("arm needs at least one joint with matching offsets and axes")
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        tool_axis = np.asarray(self.tool_axis, dtype=float)
        vlim = np.asarray(self.velocity_limits, dtype=float)
        if vlim.shape != (BASE_DOF + offs.shape[0],) or np.any(vlim <= 0):
            raise KinematicsError("velocity limits must be strictly positive, one per configuration coordinate")
        jl = np.asarray(self.joint_limits, dtype=float).reshape(-1, 2)
        if jl.shape[0] != offs.shape[0] or np.any(jl[:, 0] >= jl[:, 1]):
            raise KinematicsError("joint limits must be (lower, upper) pairs with lower < upper")
        object.__setattr__(self, "joint_offsets", offs)
        object.__setattr__(self, "joint_axes", axes)
        object.__setattr__(self, "mount", np.asarray(self.mount, dtype=float))
        object.__setattr__(self, "tool_offset", np.asarray(self.tool_offset, dtype=float))
        object.__setattr__(self, "tool_axis", tool_axis / np.linalg.norm(tool_axis))
        object.__setattr__(self, "velocity_limits", vlim)
        object.__setattr__(self, "joint_limits", jl)
        atts = {"end_effector": Attachment(link=offs.shape[0])}
        for name, a in dict(self.attachments).items():
            atts[name] = a if isinstance(a, Attachment) else Attachment(int(a[0]), tuple(a[1]))
        object.__setattr__(self, "attachments", atts)

    @property
    def n_arm(self) -> int:
        return self.joint_offsets.shape[0]

    @property
    def n(self) -> int:
        return BASE_DOF + self.n_arm


def default_robot_model(base_height: float = 0.12, mount_height: float = 0.25) -> RobotModel:
    """Small six-joint arm on a differential-drive base.

    Shoulder yaw/pitch, elbow pitch, wrist roll/pitch/roll; 0.45 m upper arm,
    0.40 m forearm and a 0.10 m tool. Attachments: ``base_center``,
    ``probe`` (tool tip) and ``elbow``.
    """
    offsets = [
        (0.0, 0.0, 0.10),
        (0.0, 0.0, 0.0),
        (0.45, 0.0, 0.0),
        (0.20, 0.0, 0.0),
        (0.20, 0.0, 0.0),
        (0.0, 0.0, 0.0),
    ]
    axes = [(0, 0, 1), (0, -1, 0), (0, -1, 0), (1, 0, 0), (0, -1, 0), (1, 0, 0)]
    mount = np.eye(4)
    mount[2, 3] = mount_height
    vlim = np.array([0.4, 0.4, 1.0] + [1.0] * 6)
    jl = np.array([[-2 * np.pi, 2 * np.pi]] * 6)
    return RobotModel(
        joint_offsets=np.array(offsets),
        joint_axes=np.array(axes, dtype=float),
        mount=mount,
        tool_offset=np.array([0.10, 0.0, 0.0]),
        tool_axis=np.array([1.0, 0.0, 0.0]),
        velocity_limits=vlim,
        joint_limits=jl,
        attachments={
            "base_center": Attachment(-1, (0.0, 0.0, base_height)),
            "probe": Attachment(6, (0.0, 0.0, 0.0)),
            "elbow": Attachment(2, (0.0, 0.0, 0.0)),
        },
    )


def _as_q(model: RobotModel, q) -> np.ndarray:
    if isinstance(q, Configuration):
        q = q.as_vector()
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n,):
        raise KinematicsError(f"configuration has dimension {q.shape}, model expects ({model.n},)")
    return q


def _chain(model: RobotModel, q: np.ndarray):
    """World frames along the chain.

    Returns base rotation/origin, then per arm joint the world position of the
    joint and its world axis, and the world rotation/position of every frame
    after each joint (index ``k`` = after joint ``k``).
    """
    x, y, phi = q[0], q[1], q[2]
    c, s = np.cos(phi), np.sin(phi)
    r_base = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    p_base = np.array([x, y, 0.0])
    r = r_base @ model.mount[:3, :3]
    p = p_base + r_base @ model.mount[:3, 3]
    joint_pos, joint_axis, frames = [], [], []
    for k in range(model.n_arm):
        p = p + r @ model.joint_offsets[k]
        axis_w = r @ model.joint_axes[k]
        joint_pos.append(p)
        joint_axis.append(axis_w)
        r = r @ _axis_rotation(model.joint_axes[k], q[BASE_DOF + k])
        frames.append((r, p))
    p_tool = p + r @ model.tool_offset
    frames.append((r, p_tool))
    return (r_base, p_base), joint_pos, joint_axis, frames


def _point_world(model, base, frames, att: Attachment) -> np.ndarray:
    off = np.asarray(att.offset, dtype=float)
    if att.link < 0:
        return base[1] + base[0] @ off
    r, p = frames[att.link]
    return p + r @ off


def _translation_jacobian(model, q, base, joint_pos, joint_axis, point, link) -> np.ndarray:
    jac = np.zeros((3, model.n))
    jac[0, 0] = 1.0
    jac[1, 1] = 1.0
    rel = point - base[1]
    jac[:, 2] = (-rel[1], rel[0], 0.0)
    for k in range(min(link + 1, model.n_arm)):
        jac[:, BASE_DOF + k] = _cross(joint_axis[k], point - joint_pos[k])
    return jac


def forward_kinematics(model: RobotModel, q) -> TaskVector:
    q = _as_q(model, q)
    _, _, _, frames = _chain(model, q)
    r, p = frames[-1]
    n_e = r @ model.tool_axis
    return TaskVector(t_e=p, n_e=n_e / np.linalg.norm(n_e))


def task_jacobian(model: RobotModel, q) -> np.ndarray:
    """6 x n Jacobian ``[J_t; J_n]`` with ``d/dt n_e = J_n qdot``."""
    q = _as_q(model, q)
    base, joint_pos, joint_axis, frames = _chain(model, q)
    r, p = frames[-1]
    n_e = r @ model.tool_axis
    j_t = _translation_jacobian(model, q, base, joint_pos, joint_axis, p, model.n_arm)
    j_w = np.zeros((3, model.n))
    j_w[2, 2] = 1.0
    for k in range(model.n_arm):
        j_w[:, BASE_DOF + k] = joint_axis[k]
    j_n = -skew(n_e) @ j_w
    return np.vstack([j_t, j_n])


def point_jacobian(model: RobotModel, q, attachment: str) -> tuple[np.ndarray, np.ndarray]:
    q = _as_q(model, q)
    try:
        att = model.attachments[attachment]
    except KeyError:
        raise KinematicsError(f"unknown attachment {attachment!r}") from None
    base, joint_pos, joint_axis, frames = _chain(model, q)
    point = _point_world(model, base, frames, att)
    return point, _translation_jacobian(model, q, base, joint_pos, joint_axis, point, att.link)


def point_jacobians(model: RobotModel, q, names) -> dict:
    """``{name: (point, J_t)}`` for several attachments from one pass over the chain."""
    q = _as_q(model, q)
    base, joint_pos, joint_axis, frames = _chain(model, q)
    out = {}
    for name in names:
        try:
            att = model.attachments[name]
        except KeyError:
            raise KinematicsError(f"unknown attachment {name!r}") from None
        point = _point_world(model, base, frames, att)
        out[name] = (point, _translation_jacobian(model, q, base, joint_pos, joint_axis, point, att.link))
    return out


def attachment_points(model: RobotModel, q) -> dict[str, np.ndarray]:
    q = _as_q(model, q)
    base, _, _, frames = _chain(model, q)
    return {name: _point_world(model, base, frames, a) for name, a in model.attachments.items()}


def nonholonomic_row(q) -> tuple[np.ndarray, float]:
    """Equality row forbidding lateral base motion: -sin(phi) xdot + cos(phi) ydot = 0."""
    q = q.as_vector() if isinstance(q, Configuration) else np.asarray(q, dtype=float)
    row = np.zeros(q.shape[0])
    row[0] = -np.sin(q[2])
    row[1] = np.cos(q[2])
    return row, 0.0
