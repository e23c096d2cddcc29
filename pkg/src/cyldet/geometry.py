"""Oriented-box geometry: corners, camera projection, 2D / BEV / 3D IoU.

Camera frame convention throughout: x right, y down, z forward (meters).
A 3D box is an oriented cuboid whose yaw rotates about the camera y axis;
at yaw 0 the width spans x and the length spans z.
"""

import math
from dataclasses import dataclass

import numpy as np

CLIP_EPS = 1e-12


class BehindCamera(ValueError):
    """Raised when a box corner lies at or behind the camera plane (z <= 0)."""


def normalize_yaw(yaw):
    """Wrap an angle into [-pi, pi)."""
    return (float(yaw) + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image-plane rectangle in pixels."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        for name in ("xmin", "ymin", "xmax", "ymax"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(
                "Box2D must be well ordered, got "
                f"({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self):
        return self.xmax - self.xmin

    @property
    def height(self):
        return self.ymax - self.ymin

    @property
    def area(self):
        return self.width * self.height


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: geometric center (X, Y, Z), dims (W, H, L), yaw.

    The center is the centroid of the cuboid, not the KITTI bottom-face
    point; yaw is stored normalized to [-pi, pi).
    """

    center: tuple
    dims: tuple
    yaw: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        dims = tuple(float(v) for v in self.dims)
        if len(center) != 3 or len(dims) != 3:
            raise ValueError("center and dims must be 3-vectors")
        if not all(math.isfinite(v) for v in center + dims):
            raise ValueError("box fields must be finite")
        if min(dims) <= 0.0:
            raise ValueError(f"dims must be strictly positive, got {dims}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @property
    def volume(self):
        w, h, length = self.dims
        return w * h * length


def rotation_about_y(yaw):
    """3x3 rotation matrix about the camera y axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Half-extent signs for the 8 corners: bottom face (y = +H/2, camera y points
# down) first, counter-clockwise in the x-z plane; top face in the same x-z
# order.  Vertical edges pair corner i with corner i + 4.
_CORNER_SIGNS = np.array(
    [
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, +1, -1],
        [+1, +1, -1],
        [+1, -1, +1],
        [-1, -1, +1],
        [-1, -1, -1],
        [+1, -1, -1],
    ],
    dtype=float,
)


def corner_offsets(dims, yaw):
    """Rotated offsets of the 8 corners from the box center, shape (8, 3)."""
    w, h, length = dims
    local = _CORNER_SIGNS * (0.5 * np.array([w, h, length]))
    return local @ rotation_about_y(yaw).T


def box3d_corners(box):
    """8 corner points of a Box3D in the camera frame, shape (8, 3)."""
    return np.asarray(box.center) + corner_offsets(box.dims, box.yaw)


def project_points(points, p):
    """Project (N, 3) camera-frame points through a 3x4 matrix to pixels."""
    points = np.asarray(points, dtype=float)
    hom = points @ p[:, :3].T + p[:, 3]
    return hom[:, :2] / hom[:, 2:3]


def project_box(box, p):
    """Axis-aligned pixel hull of the 8 projected corners of a 3D box.

    Raises BehindCamera when any corner has camera-frame z <= 0.
    """
    corners = box3d_corners(box)
    if np.any(corners[:, 2] <= 0.0):
        raise BehindCamera(f"box at {box.center} has corners with z <= 0")
    uv = project_points(corners, np.asarray(p, dtype=float))
    return Box2D(uv[:, 0].min(), uv[:, 1].min(), uv[:, 0].max(), uv[:, 1].max())


def iou_2d(a, b):
    """Intersection over union of two axis-aligned rectangles."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def footprint_polygon(box):
    """Ground-plane (x, z) rectangle of a Box3D, counter-clockwise, (4, 2)."""
    corners = box3d_corners(box)
    return corners[:4][:, [0, 2]]


def polygon_area(poly):
    """Shoelace area of a counter-clockwise polygon, (N, 2)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

def clip_polygon(subject, clip):
    """Sutherland-Hodgman clip of a convex subject polygon by a convex clip
    polygon.  Both counter-clockwise, arrays of shape (N, 2).  Returns the
    (possibly empty) intersection polygon."""
    output = [tuple(v) for v in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        vertices = output
        output = []
        m = len(vertices)
        # Signed distance from the edge line; interior of a CCW polygon is
        # on the positive side.
        side = [ex * (vy - ay) - ey * (vx - ax) for vx, vy in vertices]
        for j in range(m):
            k = (j + 1) % m
            (cx, cy), s_c = vertices[j], side[j]
            (dx, dy), s_d = vertices[k], side[k]
            if s_c >= -CLIP_EPS:
                output.append((cx, cy))
            if (s_c >= -CLIP_EPS) != (s_d >= -CLIP_EPS):
                t = s_c / (s_c - s_d)
                output.append((cx + t * (dx - cx), cy + t * (dy - cy)))
    if len(output) < 3:
        return np.zeros((0, 2))
    return np.array(output)


def _bev_intersection_area(a, b):
    # clip in a canonical operand order so iou_*(a, b) == iou_*(b, a)
    # exactly despite floating-point rounding in the clipper
    if (b.center, b.dims, b.yaw) < (a.center, a.dims, a.yaw):
        a, b = b, a
    inter = clip_polygon(footprint_polygon(a), footprint_polygon(b))
    return max(0.0, polygon_area(inter))


def iou_bev(a, b):
    """IoU of the two yaw-rotated box footprints in the x-z ground plane."""
    inter = _bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    area_a = a.dims[0] * a.dims[2]
    area_b = b.dims[0] * b.dims[2]
    return inter / (area_a + area_b - inter)


def _y_overlap(a, b):
    a_lo, a_hi = a.center[1] - a.dims[1] / 2.0, a.center[1] + a.dims[1] / 2.0
    b_lo, b_hi = b.center[1] - b.dims[1] / 2.0, b.center[1] + b.dims[1] / 2.0
    return max(0.0, min(a_hi, b_hi) - max(a_lo, b_lo))


def iou_3d(a, b):
    """Volumetric IoU: BEV intersection area times vertical overlap."""
    overlap = _y_overlap(a, b)
    if overlap <= 0.0:
        return 0.0
    inter = _bev_intersection_area(a, b) * overlap
    if inter <= 0.0:
        return 0.0
    return inter / (a.volume + b.volume - inter)
