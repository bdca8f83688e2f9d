"""Planar geometry for 3D detection boxes: poses, ego transforms, rotated-rectangle IoU."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

# BEV footprints below this area (m^2) are rejected as degenerate.
MIN_BEV_AREA = 1e-6


def normalize_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi].

    Values already in range are returned unchanged, so normalization is
    idempotent down to the last bit. NaN and infinity are rejected.
    """
    if not math.isfinite(angle):
        raise ValueError(f"angle must be finite, got {angle!r}")
    if -math.pi < angle <= math.pi:
        return angle
    wrapped = angle % TWO_PI
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class Pose:
    """Planar object pose: position in meters, heading wrapped to (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        _require_finite("x", self.x)
        _require_finite("y", self.y)
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class EgoPose:
    """Planar sensor pose in the global frame at one timestamp."""

    x: float
    y: float
    yaw: float

    def __post_init__(self) -> None:
        _require_finite("x", self.x)
        _require_finite("y", self.y)
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @classmethod
    def identity(cls) -> "EgoPose":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Box3D:
    """7-DoF detection box: center (x, y, z), size (w, l, h), yaw about +z.

    Length runs along the heading axis and width across it. Sizes must be
    strictly positive and the BEV footprint at least MIN_BEV_AREA.
    """

    x: float
    y: float
    z: float
    w: float
    l: float
    h: float
    yaw: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "w", "l", "h"):
            _require_finite(name, getattr(self, name))
        if self.w <= 0.0 or self.l <= 0.0 or self.h <= 0.0:
            raise ValueError("box dimensions must be strictly positive")
        if self.w * self.l < MIN_BEV_AREA:
            raise ValueError(f"degenerate BEV footprint: w*l = {self.w * self.l!r}")
        object.__setattr__(self, "yaw", normalize_angle(self.yaw))

    @property
    def bev_area(self) -> float:
        return self.w * self.l

    @property
    def bev_pose(self) -> Pose:
        return Pose(self.x, self.y, self.yaw)

    def with_bev_pose(self, pose: Pose) -> "Box3D":
        return replace(self, x=pose.x, y=pose.y, yaw=pose.heading)

    @classmethod
    def from_array(cls, values) -> "Box3D":
        x, y, z, w, l, h, yaw = (float(v) for v in values)
        return cls(x, y, z, w, l, h, yaw)

    def to_array(self) -> list[float]:
        return [self.x, self.y, self.z, self.w, self.l, self.h, self.yaw]


def _corners(box: Box3D) -> tuple[tuple[float, float], ...]:
    """BEV footprint corners as plain tuples, counter-clockwise."""
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    hl = 0.5 * box.l
    hw = 0.5 * box.w
    cl, sl = c * hl, s * hl
    cw, sw = c * hw, s * hw
    x, y = box.x, box.y
    return (
        (x + cl + sw, y + sl - cw),
        (x + cl - sw, y + sl + cw),
        (x - cl - sw, y - sl + cw),
        (x - cl + sw, y - sl - cw),
    )


def bev_corners(box: Box3D) -> np.ndarray:
    """Counter-clockwise corners of the BEV footprint, shape (4, 2).

    The first two corners bound the +heading face; extents are l along the
    heading axis and w across it.
    """
    return np.array(_corners(box), dtype=float)


def _polygon_area(points) -> float:
    """Absolute shoelace area of a simple polygon given as (x, y) pairs."""
    area = 0.0
    n = len(points)
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    return 0.5 * abs(area)


def _clip_convex(subject, clipper):
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex polygon."""
    output = list(subject)
    cx1, cy1 = clipper[-1]
    for cx2, cy2 in clipper:
        if not output:
            break
        ex = cx2 - cx1
        ey = cy2 - cy1
        points = output
        output = []
        sx, sy = points[-1]
        fs = ex * (sy - cy1) - ey * (sx - cx1)
        for px, py in points:
            fp = ex * (py - cy1) - ey * (px - cx1)
            if (fp >= 0.0) != (fs >= 0.0):
                t = fs / (fs - fp)
                output.append((sx + t * (px - sx), sy + t * (py - sy)))
            if fp >= 0.0:
                output.append((px, py))
            sx, sy, fs = px, py, fp
        cx1, cy1 = cx2, cy2
    return output


def _iou_from_corners(corners_a, area_a, corners_b, area_b) -> float:
    clipped = _clip_convex(corners_a, corners_b)
    if len(clipped) < 3:
        return 0.0
    inter = _polygon_area(clipped)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    iou = inter / union
    if iou < 0.0:
        return 0.0
    return 1.0 if iou > 1.0 else iou


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Rotated-rectangle IoU of two boxes' BEV footprints, in [0, 1].

    Intersection is computed by convex polygon clipping, so the result is
    symmetric in its arguments. Raises ValueError on a degenerate footprint.
    """
    area_a = a.w * a.l
    area_b = b.w * b.l
    if area_a < MIN_BEV_AREA or area_b < MIN_BEV_AREA:
        raise ValueError("degenerate box in IoU")
    # identical footprints clip to themselves exactly
    if a.x == b.x and a.y == b.y and a.w == b.w and a.l == b.l and a.yaw == b.yaw:
        return 1.0
    dx = b.x - a.x
    dy = b.y - a.y
    ra = 0.5 * math.hypot(a.w, a.l)
    rb = 0.5 * math.hypot(b.w, b.l)
    reach = ra + rb
    # footprints cannot overlap past the circumradius sum
    if dx * dx + dy * dy >= reach * reach:
        return 0.0
    return _iou_from_corners(_corners(a), area_a, _corners(b), area_b)


def transform_box(box: Box3D, src: EgoPose, dst: EgoPose) -> Box3D:
    """Re-express a box given in `src` ego coordinates in `dst` ego coordinates.

    Composes the src -> global -> dst planar rigid transforms. z and size are
    carried unchanged; yaw shifts by the rotation difference and is rewrapped.
    """
    if src == dst:
        return box
    cs = math.cos(src.yaw)
    ss = math.sin(src.yaw)
    gx = src.x + cs * box.x - ss * box.y
    gy = src.y + ss * box.x + cs * box.y
    cd = math.cos(dst.yaw)
    sd = math.sin(dst.yaw)
    rx = gx - dst.x
    ry = gy - dst.y
    return replace(
        box,
        x=cd * rx + sd * ry,
        y=-sd * rx + cd * ry,
        yaw=normalize_angle(box.yaw + src.yaw - dst.yaw),
    )
