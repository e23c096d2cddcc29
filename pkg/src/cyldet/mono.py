"""Monocular pose recovery and spatial scattering of 3D seed points.

Given a tight 2D detection plus regressed dims and heading, each corner
configuration assigns one 3D box corner to each 2D box side (left, right,
top, bottom).  Pinning the assigned corner's image coordinate to its side
yields, after cross-multiplying the projection, one linear constraint on
the unknown translation per side; the 4x3 system is solved by least
squares.  The configuration whose re-projected box best overlaps the 2D
box wins.

The constraint matrix depends only on the 2D box and the projection, not
on the configuration, so the full enumeration is solved as a single
batched matrix product.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Box2D, Box3D, corner_offsets, iou_2d, project_box

RANK_RCOND = 1e-10
DEFAULT_RESIDUAL_CAP = 10.0


class SingularSystem(ValueError):
    """The 4x3 constraint system cannot determine a translation."""


class NoFeasibleConfiguration(RuntimeError):
    """Every corner configuration was infeasible for the given inputs."""


@dataclass(frozen=True)
class CornerConfiguration:
    """Assignment of a 3D corner index (0..7) to each 2D box side."""

    left: int
    right: int
    top: int
    bottom: int

    def __post_init__(self):
        for name in ("left", "right", "top", "bottom"):
            side = int(getattr(self, name))
            if not 0 <= side <= 7:
                raise ValueError("corner indices must be in 0..7")
            object.__setattr__(self, name, side)

    @property
    def index(self):
        return ((self.left * 8 + self.right) * 8 + self.top) * 8 + self.bottom

    def as_array(self):
        return np.array([self.left, self.right, self.top, self.bottom])


@dataclass(frozen=True)
class MonoEstimate:
    box2d: Box2D
    dims: tuple
    yaw: float
    solved_center: tuple
    best_config: CornerConfiguration
    agreement: float
    residual: float


@dataclass(frozen=True)
class ScatterParams:
    """Size-deviation ratio s in (0, 1) and seed stride in meters."""

    s: float = 0.5
    stride: float = 1.6

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must be in (0, 1), got {self.s}")
        if self.stride <= 0.0:
            raise ValueError(f"stride must be positive, got {self.stride}")


@dataclass(frozen=True)
class ScatterResult:
    """Equally spaced seed points on the segment between the extreme-size
    solutions p1 (shrunk dims, nearer) and p2 (grown dims, farther)."""

    seed_points: np.ndarray
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        seeds = np.asarray(self.seed_points, dtype=float).reshape(-1, 3)
        seeds.flags.writeable = False
        object.__setattr__(self, "seed_points", seeds)
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        object.__setattr__(self, "p2", np.asarray(self.p2, dtype=float))

    def __len__(self):
        return self.seed_points.shape[0]


def _side_system(box2d, p):
    """Constraint rows for [left, right, top, bottom].

    Side i with image coordinate q_i taken from projection row r_i gives
    a_i . (T + o) + k_i = 0 with a_i = P[r_i,:3] - q_i P[2,:3].
    """
    p = np.asarray(p, dtype=float)
    coords = np.array([box2d.xmin, box2d.xmax, box2d.ymin, box2d.ymax])
    rows = np.array([0, 0, 1, 1])
    a = p[rows, :3] - coords[:, None] * p[2, :3]
    k = p[rows, 3] - coords * p[2, 3]
    return a, k, coords, rows


def _pseudo_inverse(a):
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[0] <= 0.0 or s[-1] / s[0] < RANK_RCOND:
        raise SingularSystem(
            f"constraint matrix is rank deficient (singular values {s})"
        )
    return (vt.T / s) @ u.T


def _pixel_errors(p, rows, coords, points):
    """Per-side projection error in pixels for constrained corner points
    of shape (..., 4, 3).  Returns (errors, w) with w the projective depth."""
    p = np.asarray(p, dtype=float)
    w = points @ p[2, :3] + p[2, 3]
    num = np.einsum("...ij,ij->...i", points, p[rows, :3]) + p[rows, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        err = num / w - coords
    return err, num, w


def solve_translation(box2d, dims, yaw, config, p, residual_cap=DEFAULT_RESIDUAL_CAP):
    """Least-squares translation for one corner configuration.

    Returns (center (3,), rms pixel residual) or None when the solution is
    geometrically infeasible (center behind the camera, mirror-image
    projection, side ordering violated, or residual above the cap).
    Raises SingularSystem for rank-deficient or structurally degenerate
    configurations (one corner pinned to both members of opposite sides).
    """
    if config.left == config.right or config.top == config.bottom:
        raise SingularSystem(
            "configuration pins one corner to two opposite sides, which "
            "forces the corner onto the camera plane"
        )
    a, k, coords, rows = _side_system(box2d, p)
    pinv = _pseudo_inverse(a)
    offsets = corner_offsets(dims, yaw)
    sel = config.as_array()
    b = -(np.einsum("ij,ij->i", a, offsets[sel]) + k)
    center = pinv @ b
    err, num, w = _pixel_errors(p, rows, coords, center + offsets[sel])
    rms = float(np.sqrt(np.mean(err**2)))
    feasible = (
        center[2] > 0.0
        and np.all(w > 0.0)
        and rms <= residual_cap
        and num[0] / w[0] <= num[1] / w[1] + residual_cap
        and num[2] / w[2] <= num[3] / w[3] + residual_cap
    )
    if not feasible:
        return None
    return center, rms


def _solve_unchecked(box2d, dims, yaw, config, p):
    """Raw least-squares solution without feasibility filtering."""
    if config.left == config.right or config.top == config.bottom:
        raise SingularSystem(
            "configuration pins one corner to two opposite sides"
        )
    a, k, _, _ = _side_system(box2d, p)
    pinv = _pseudo_inverse(a)
    offsets = corner_offsets(dims, yaw)
    sel = config.as_array()
    b = -(np.einsum("ij,ij->i", a, offsets[sel]) + k)
    return pinv @ b


def enumerate_configurations(reduced=False):
    """Corner-index table of candidate configurations, shape (M, 4).

    The full set enumerates all 4096 side-to-corner assignments.  The
    reduced 128-entry set assumes an upright box and a zero-skew
    projection: the horizontal extremes then lie on one of the four
    vertical edges (whose two corners share their horizontal image
    coordinate, so the bottom corner represents the edge), and the
    vertical extremes lie on a depth-extreme footprint corner, the top on
    the upper face and the bottom on the lower face, with the two corners
    either sharing a footprint corner or sitting on antipodal ones.
    """
    if not reduced:
        idx = np.arange(4096)
        return np.stack(
            [(idx >> 9) & 7, (idx >> 6) & 7, (idx >> 3) & 7, idx & 7], axis=1
        )
    vertical_patterns = ((0, 0), (1, 1), (2, 2), (3, 3),
                         (0, 2), (2, 0), (1, 3), (3, 1))
    rows = []
    for left in range(4):
        for right in range(4):
            for top_fp, bottom_fp in vertical_patterns:
                rows.append((left, right, top_fp + 4, bottom_fp))
    return np.array(rows)


def geometric_agreement_search(
    box2d, dims, yaw, p, residual_cap=DEFAULT_RESIDUAL_CAP, reduced=False
):
    """Best-overlap translation over the corner configuration set.

    Every configuration is solved by least squares; feasible candidates
    are scored by the 2D IoU between the input box and the axis-aligned
    hull of their re-projected corners.  Ties resolve by smaller pixel
    residual, then lower configuration index.
    """
    p = np.asarray(p, dtype=float)
    a, k, coords, rows = _side_system(box2d, p)
    try:
        pinv = _pseudo_inverse(a)
    except SingularSystem as exc:
        raise NoFeasibleConfiguration(str(exc)) from exc
    offsets = corner_offsets(dims, yaw)
    configs = enumerate_configurations(reduced=reduced)

    side_dot = a @ offsets.T                       # (4, 8)
    b = -(np.take_along_axis(side_dot, configs.T, axis=1).T + k)  # (M, 4)
    centers = b @ pinv.T                           # (M, 3)

    sel_offsets = offsets[configs]                 # (M, 4, 3)
    err, num, w = _pixel_errors(p, rows, coords, centers[:, None, :] + sel_offsets)
    with np.errstate(invalid="ignore"):
        rms = np.sqrt(np.mean(err**2, axis=1))
        uv = num / w
    nondegenerate = (configs[:, 0] != configs[:, 1]) & (configs[:, 2] != configs[:, 3])
    feasible = (
        nondegenerate
        & (centers[:, 2] > 0.0)
        & np.all(w > 0.0, axis=1)
        & (rms <= residual_cap)
        & (uv[:, 0] <= uv[:, 1] + residual_cap)
        & (uv[:, 2] <= uv[:, 3] + residual_cap)
    )
    if not np.any(feasible):
        raise NoFeasibleConfiguration(
            "no corner configuration yields a feasible translation"
        )

    centers_f = centers[feasible]
    rms_f = rms[feasible]
    configs_f = configs[feasible]
    corners = centers_f[:, None, :] + offsets[None, :, :]      # (F, 8, 3)
    w_all = corners @ p[2, :3] + p[2, 3]
    u_all = (corners @ p[0, :3] + p[0, 3]) / w_all
    v_all = (corners @ p[1, :3] + p[1, 3]) / w_all
    in_front = np.all(w_all > 0.0, axis=1) & np.all(corners[:, :, 2] > 0.0, axis=1)

    xmin_c, xmax_c = u_all.min(axis=1), u_all.max(axis=1)
    ymin_c, ymax_c = v_all.min(axis=1), v_all.max(axis=1)
    iw = np.minimum(xmax_c, box2d.xmax) - np.maximum(xmin_c, box2d.xmin)
    ih = np.minimum(ymax_c, box2d.ymax) - np.maximum(ymin_c, box2d.ymin)
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_c = (xmax_c - xmin_c) * (ymax_c - ymin_c)
    iou = np.where(
        in_front, inter / (area_c + box2d.area - inter), -1.0
    )
    if not np.any(iou >= 0.0):
        raise NoFeasibleConfiguration(
            "every feasible translation projects partly behind the camera"
        )

    config_index = (
        ((configs_f[:, 0] * 8 + configs_f[:, 1]) * 8 + configs_f[:, 2]) * 8
        + configs_f[:, 3]
    )
    best = np.lexsort((config_index, rms_f, -iou))[0]
    best_config = CornerConfiguration(*configs_f[best])
    center = centers_f[best]
    agreement = iou_2d(
        box2d, project_box(Box3D(tuple(center), tuple(dims), yaw), p)
    )
    return MonoEstimate(
        box2d=box2d,
        dims=tuple(float(d) for d in dims),
        yaw=float(yaw),
        solved_center=tuple(float(c) for c in center),
        best_config=best_config,
        agreement=float(agreement),
        residual=float(rms_f[best]),
    )


def spatial_scatter(est, params, p):
    """Seed points between the shrunk- and grown-dims re-solves of the
    winning configuration.

    Both extremes keep the configuration fixed; the segment between their
    centers is divided into ceil(len / stride) seeds (at least one),
    starting at the shrunk-dims end and spaced len / n apart.
    """
    dims = np.asarray(est.dims, dtype=float)
    p1 = _solve_unchecked(
        est.box2d, tuple(dims * (1.0 - params.s)), est.yaw, est.best_config, p
    )
    p2 = _solve_unchecked(
        est.box2d, tuple(dims * (1.0 + params.s)), est.yaw, est.best_config, p
    )
    span = float(np.linalg.norm(p2 - p1))
    count = max(1, math.ceil(span / params.stride))
    steps = np.arange(count, dtype=float)[:, None] / count
    seeds = p1 + steps * (p2 - p1)
    return ScatterResult(seed_points=seeds, p1=p1, p2=p2)
