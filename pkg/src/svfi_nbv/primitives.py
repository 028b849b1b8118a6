"""Planes, lines, signed distances and the deterministic VFI rows built on them.

Every row is returned in the canonical form ``coeffs @ qdot <= bound``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

HARD = "inequality-hard"
SLACK = "inequality-slack"
EQUALITY = "equality"
CHANCE = "chance-surrogate"
ROW_KINDS = (HARD, SLACK, EQUALITY, CHANCE)

SINGULAR_DISTANCE = 1e-9


class SingularDistanceError(ValueError):
    """Point lies on the line, so the distance Jacobian is undefined."""


@dataclass(frozen=True)
class Plane:
    n_pi: np.ndarray
    d_pi: float

    def __post_init__(self):
        n = np.asarray(self.n_pi, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        object.__setattr__(self, "n_pi", n)
        object.__setattr__(self, "d_pi", float(self.d_pi))

    def as_vector(self) -> np.ndarray:
        return np.append(self.n_pi, self.d_pi)

    def flipped(self) -> "Plane":
        return Plane(-self.n_pi, -self.d_pi)


@dataclass(frozen=True)
class Line:
    p_l: np.ndarray
    d_l: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.d_l, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("line direction must be unit length")
        if self.radius < 0:
            raise ValueError("line radius must be non-negative")
        object.__setattr__(self, "p_l", np.asarray(self.p_l, dtype=float))
        object.__setattr__(self, "d_l", d)
        object.__setattr__(self, "radius", float(self.radius))


@dataclass
class ConstraintRow:
    coeffs: np.ndarray
    bound: float
    kind: str = HARD
    label: str = ""
    slack_index: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ROW_KINDS:
            raise ValueError(f"unknown row kind {self.kind!r}")

    def with_slack(self, index: int) -> "ConstraintRow":
        return replace(self, slack_index=index)

    def margin(self, qdot) -> float:
        return float(self.bound - self.coeffs @ qdot)


def point_plane_distance(t, pi: Plane) -> float:
    return float(pi.n_pi @ np.asarray(t, dtype=float) - pi.d_pi)


def point_plane_vfi_row(t, j_t, pi: Plane, d_safe: float, eta: float, label: str = "") -> ConstraintRow:
    """Approach-rate limit ``-n^T J_t qdot <= eta (d - d_safe)``."""
    if eta < 0 or d_safe < 0:
        raise ValueError("eta and d_safe must be non-negative")
    d = point_plane_distance(t, pi)
    return ConstraintRow(
        coeffs=-(pi.n_pi @ j_t),
        bound=eta * (d - d_safe),
        kind=HARD,
        label=label,
        meta={"distance": d, "d_safe": d_safe},
    )


def point_line_distance(t, line: Line) -> float:
    return float(np.linalg.norm(np.cross(np.asarray(t, dtype=float) - line.p_l, line.d_l)))


def point_line_distance_jacobian(t, j_t, line: Line) -> tuple[float, np.ndarray]:
    """Distance and its 1 x n Jacobian; the gradient is the unit radial vector."""
    rel = np.asarray(t, dtype=float) - line.p_l
    radial = rel - (rel @ line.d_l) * line.d_l
    d = float(np.linalg.norm(radial))
    if d < SINGULAR_DISTANCE:
        raise SingularDistanceError(f"point is {d:.3g} m from the line axis")
    return d, (radial / d) @ j_t


def point_line_vfi_row(t, j_t, line: Line, d_safe: float, eta: float, label: str = "") -> ConstraintRow:
    """Slack-eligible approach-rate limit toward a line.

    ``d_safe`` is the full clearance from the axis; callers add the radius.
    """
    d, j_d = point_line_distance_jacobian(t, j_t, line)
    return ConstraintRow(
        coeffs=-j_d,
        bound=eta * (d - d_safe),
        kind=SLACK,
        label=label,
        meta={"distance": d, "d_safe": d_safe},
    )
