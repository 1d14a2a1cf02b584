"""
Geometry
Pinhole camera model, rotation vectors, board layout and the coordinate chain
used to annotate gaze targets, plus ray-sphere intersection and angular error.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from gaze.errors import InvalidCamera, NonPositiveDepth, UnknownMarker, ZeroVector

Point2 = Tuple[float, float]
Point3 = Tuple[float, float, float]

ROTATION_TOL = 1e-12
TANGENT_TOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels (no distortion)."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidCamera(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidCamera(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
            'width': self.width, 'height': self.height,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraIntrinsics":
        return cls(
            fx=float(data['fx']), fy=float(data['fy']),
            cx=float(data['cx']), cy=float(data['cy']),
            width=int(data['width']), height=int(data['height']),
        )


def canonical_rotvec(r: Sequence[float]) -> np.ndarray:
    """Map a rotation vector to the equivalent one with norm <= pi.

    At exactly pi the axis sign is fixed so the first nonzero component is positive.
    """
    r = np.asarray(r, dtype=float).reshape(3)
    theta = float(np.linalg.norm(r))
    if theta <= math.pi:
        reduced, axis = theta, (r / theta if theta > 0 else r)
    else:
        axis = r / theta
        reduced = math.fmod(theta, 2.0 * math.pi)
        if reduced > math.pi:
            axis = -axis
            reduced = 2.0 * math.pi - reduced
    if abs(reduced - math.pi) <= ROTATION_TOL:
        nonzero = axis[np.abs(axis) > ROTATION_TOL]
        if nonzero.size and nonzero[0] < 0:
            axis = -axis
    return axis * reduced


def rodrigues(r: Sequence[float]) -> np.ndarray:
    """Rotation matrix of an axis-angle vector; the zero vector maps to identity."""
    r = np.asarray(r, dtype=float).reshape(3)
    if not np.any(r):
        return np.eye(3)
    return Rotation.from_rotvec(r).as_matrix()


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation vector r (radians) and translation t (meters)."""
    r: Point3 = (0.0, 0.0, 0.0)
    t: Point3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, 'r', tuple(float(v) for v in canonical_rotvec(self.r)))
        object.__setattr__(self, 't', tuple(float(v) for v in np.asarray(self.t, dtype=float).reshape(3)))

    @property
    def rotation(self) -> np.ndarray:
        return rodrigues(self.r)

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form [R t; 0 1]."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.t
        return m

    def to_dict(self) -> Dict[str, Any]:
        return {'r': list(self.r), 't': list(self.t)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Pose":
        return cls(r=tuple(data['r']), t=tuple(data['t']))


def apply_pose(pose: Pose, p: Sequence[float]) -> np.ndarray:
    """R p + t."""
    return pose.rotation @ np.asarray(p, dtype=float) + np.asarray(pose.t)


def project(p: Sequence[float], cam: CameraIntrinsics) -> np.ndarray:
    """Project a camera-frame point to pixels; the result may fall outside the image."""
    x, y, z = (float(v) for v in p)
    if z <= 0:
        raise NonPositiveDepth(f"cannot project point with z={z}")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy])


def backproject(px: Sequence[float], depth: float, cam: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point at the given depth along the pixel's ray."""
    if depth <= 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = (float(c) for c in px)
    return np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, float(depth)])


def _default_ids(rows: int, cols: int) -> Tuple[Tuple[int, ...], ...]:
    return tuple(tuple(row * cols + col for col in range(cols)) for row in range(rows))


@dataclass(frozen=True)
class BoardLayout:
    """Planar marker grid.

    Axes: +x along increasing column, +y toward decreasing row (toward the
    robot), z out of the plane. The origin sits at the centre of
    ``origin_marker_id``. Marker pitch is ``marker_size + marker_gap``.
    """
    rows: int = 4
    cols: int = 5
    marker_size: float = 0.07
    marker_gap: float = 0.07
    origin_marker_id: int = 16
    ids: Optional[Tuple[Tuple[int, ...], ...]] = field(default=None)

    def __post_init__(self):
        ids = self.ids if self.ids is not None else _default_ids(self.rows, self.cols)
        ids = tuple(tuple(int(i) for i in row) for row in ids)
        object.__setattr__(self, 'ids', ids)
        if len(ids) != self.rows or any(len(row) != self.cols for row in ids):
            raise UnknownMarker(f"id grid does not match {self.rows}x{self.cols} layout")
        flat = [i for row in ids for i in row]
        if len(set(flat)) != len(flat):
            raise UnknownMarker("board layout contains duplicate marker ids")
        if self.origin_marker_id not in flat:
            raise UnknownMarker(f"origin marker {self.origin_marker_id} not on the board")

    @property
    def pitch(self) -> float:
        return self.marker_size + self.marker_gap

    @property
    def marker_ids(self) -> Tuple[int, ...]:
        return tuple(i for row in self.ids for i in row)

    def cell(self, marker_id: int) -> Tuple[int, int]:
        for r, row in enumerate(self.ids):
            for c, mid in enumerate(row):
                if mid == marker_id:
                    return r, c
        raise UnknownMarker(f"marker {marker_id} is not part of the board layout")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rows': self.rows, 'cols': self.cols,
            'marker_size': self.marker_size, 'marker_gap': self.marker_gap,
            'origin_marker_id': self.origin_marker_id,
            'ids': [list(row) for row in self.ids],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoardLayout":
        ids = data.get('ids')
        return cls(
            rows=int(data['rows']), cols=int(data['cols']),
            marker_size=float(data['marker_size']), marker_gap=float(data['marker_gap']),
            origin_marker_id=int(data['origin_marker_id']),
            ids=tuple(tuple(row) for row in ids) if ids is not None else None,
        )


def board_marker_point(layout: BoardLayout, marker_id: int) -> np.ndarray:
    """Centre of a marker in board coordinates (z = 0)."""
    row, col = layout.cell(marker_id)
    row0, col0 = layout.cell(layout.origin_marker_id)
    return np.array([(col - col0) * layout.pitch, -(row - row0) * layout.pitch, 0.0])


def target_via_reference(p_t_wcs: Sequence[float], p_ref_wcs: Sequence[float],
                         R_ref: np.ndarray, p_ref_bcs: Sequence[float],
                         board_pose_ccs: Pose) -> np.ndarray:
    """Carry a target seen by the external camera into the robot camera frame.

    world -> reference marker -> board -> camera.
    """
    p_t_ref = np.asarray(R_ref, dtype=float).T @ (np.asarray(p_t_wcs, dtype=float) - np.asarray(p_ref_wcs, dtype=float))
    p_t_bcs = np.asarray(p_ref_bcs, dtype=float) + p_t_ref
    return apply_pose(board_pose_ccs, p_t_bcs)


def ray_sphere_intersect(origin: Sequence[float], direction: Sequence[float],
                         center: Sequence[float], radius: float) -> Tuple[float, ...]:
    """Non-negative ray parameters where the ray meets the sphere, ascending.

    A tangent ray (discriminant within TANGENT_TOL of zero) yields one root.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    oc = o - np.asarray(center, dtype=float)
    b = float(d @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - c

    if disc < -TANGENT_TOL:
        return ()
    if disc <= TANGENT_TOL:
        roots = [-b]
    else:
        # stable quadratic roots: q and c / q
        q = -b - math.copysign(math.sqrt(disc), b)
        roots = [q, c / q] if q != 0 else [0.0, 0.0]
    return tuple(sorted(s for s in roots if s >= 0.0))


def angular_error_deg(u: Sequence[float], v: Sequence[float]) -> float:
    """Angle between two non-zero vectors in degrees, in [0, 180]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroVector("angular error is undefined for a zero vector")
    u, v = u / nu, v / nv
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(u, v))), float(u @ v)))


def normalize(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ZeroVector("cannot normalise a zero vector")
    return v / n
