"""Codecs between raw network-style outputs and box quantities.

Location offsets are squashed through a sigmoid so the decoded point can
never leave the proposal's per-axis bounds.  Rotation and size use a
hybrid class-plus-residual parameterization: rotation bins equally divide
[0, pi), size classes are k-means clusters of (H, W, L) training dims.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit


class OutOfBounds(ValueError):
    pass


class NonPositiveDims(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ProposalRegion:
    """Standing-cylinder region: center, ground-plane radius, vertical band,
    and the per-axis location-decode bounds (m_x, m_y, m_z)."""

    center: tuple
    radius: float = 2.0
    y_extent: tuple = (-1.0, 3.0)
    bounds: tuple = (2.0, 2.0, 2.0)

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        bounds = tuple(float(v) for v in self.bounds)
        y_extent = tuple(float(v) for v in self.y_extent)
        if len(center) != 3 or len(bounds) != 3:
            raise ValueError("center and bounds must be 3-vectors")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if min(bounds) <= 0.0:
            raise ValueError("bounds must be positive")
        if not y_extent[0] < y_extent[1]:
            raise ValueError("y_extent must be ordered")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "y_extent", y_extent)
        object.__setattr__(self, "radius", float(self.radius))

    def recentered(self, center):
        return ProposalRegion(tuple(center), self.radius, self.y_extent, self.bounds)


def decode_location(t, region):
    """Map raw (t_x, t_y, t_z) into a point bounded by the region:
    axis = center + 2 * (sigmoid(t) - 0.5) * bound."""
    t = np.asarray(t, dtype=float)
    c = np.asarray(region.center)
    m = np.asarray(region.bounds)
    return c + 2.0 * (expit(t) - 0.5) * m


def encode_location(target, region):
    """Inverse of decode_location; the target must lie strictly inside the
    per-axis bounds."""
    off = np.asarray(target, dtype=float) - np.asarray(region.center)
    m = np.asarray(region.bounds)
    if np.any(np.abs(off) >= m):
        raise OutOfBounds(
            f"target offset {tuple(off)} not strictly inside bounds {tuple(m)}"
        )
    return logit(off / (2.0 * m) + 0.5)


def objectness(t_o):
    """Sigmoid squashing of the raw objectness output."""
    return float(expit(t_o))


@dataclass(frozen=True)
class RotationBins:
    """Equal partition of [0, pi) into n_bins heading bins."""

    n_bins: int

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")

    @property
    def width(self):
        return math.pi / self.n_bins

    def centers(self):
        return (np.arange(self.n_bins) + 0.5) * self.width


HOT_LOGIT = 10.0


def encode_rotation(yaw, bins, normalize_residual=False):
    """Encode a heading as (logits, residuals) over the rotation bins.

    The heading is folded into [0, pi) first; the residual is stored at
    the target bin in radians (or bin-width units when normalized).
    """
    yaw = float(yaw) % math.pi
    idx = min(int(yaw / bins.width), bins.n_bins - 1)
    residual = yaw - (idx + 0.5) * bins.width
    if normalize_residual:
        residual /= bins.width
    logits = np.zeros(bins.n_bins)
    logits[idx] = HOT_LOGIT
    residuals = np.zeros(bins.n_bins)
    residuals[idx] = residual
    return logits, residuals


def decode_rotation(logits, residuals, bins, normalize_residual=False):
    """Heading in [0, pi) from the winning bin center plus its residual."""
    logits = np.asarray(logits, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    if logits.shape != (bins.n_bins,) or residuals.shape != (bins.n_bins,):
        raise ValueError("encoding arity does not match the bin count")
    idx = int(np.argmax(logits))
    residual = residuals[idx]
    if normalize_residual:
        residual *= bins.width
    return ((idx + 0.5) * bins.width + residual) % math.pi


@dataclass(frozen=True)
class SizeClusters:
    """k-means centroids of box dims in (H, W, L) order."""

    centroids: np.ndarray
    sse: float = 0.0
    sse_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=float).reshape(-1, 3)
        if np.any(c <= 0.0):
            raise ValueError("centroids must be strictly positive")
        if len(np.unique(c, axis=0)) != len(c):
            raise ValueError("centroids must be distinct")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def n_clusters(self):
        return self.centroids.shape[0]

    def assign(self, dims):
        d = self.centroids - np.asarray(dims, dtype=float)
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))


def _kmeans_pp_init(data, k, rng):
    centroids = [data[rng.integers(len(data))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.sum((data - c) ** 2, axis=1) for c in centroids], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick any new one
            remaining = np.ones(len(data), dtype=bool)
            probs = remaining / remaining.sum()
        else:
            probs = d2 / total
        centroids.append(data[rng.choice(len(data), p=probs)])
    return np.array(centroids)


def _lloyd(data, centroids, max_iter=100):
    assignment = None
    history = []
    for _ in range(max_iter):
        d2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(data)), new_assignment].sum()))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(len(centroids)):
            members = data[assignment == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return centroids, assignment, history


def fit_size_clusters(dims, n_clusters, seed, n_init=10):
    """Lloyd's k-means over (H, W, L) rows with k-means++ seeding.

    dims may be an (N, 3) array or a list of labels exposing box3d; the
    best of n_init seeded restarts (by within-cluster SSE) is returned.
    """
    data = _dims_array(dims)
    if len(np.unique(data, axis=0)) < n_clusters:
        raise InsufficientData(
            f"need at least {n_clusters} distinct dim triples, "
            f"got {len(np.unique(data, axis=0))}"
        )
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centroids = _kmeans_pp_init(data, n_clusters, rng)
        centroids, _, history = _lloyd(data, centroids)
        if best is None or history[-1] < best[1][-1]:
            best = (centroids, history)
    centroids, history = best
    order = np.lexsort(centroids.T[::-1])
    return SizeClusters(centroids[order], sse=history[-1], sse_history=tuple(history))


def _dims_array(dims):
    if hasattr(dims, "__len__") and len(dims) and hasattr(dims[0], "box3d"):
        rows = []
        for lab in dims:
            w, h, length = lab.box3d.dims
            rows.append((h, w, length))
        return np.array(rows, dtype=float)
    return np.asarray(dims, dtype=float).reshape(-1, 3)


def encode_size(dims_hwl, clusters, log_space=False):
    """Encode (H, W, L) as cluster logits plus per-cluster residuals."""
    dims_hwl = np.asarray(dims_hwl, dtype=float)
    idx = clusters.assign(dims_hwl)
    logits = np.zeros(clusters.n_clusters)
    logits[idx] = HOT_LOGIT
    residuals = np.zeros((clusters.n_clusters, 3))
    if log_space:
        residuals[idx] = np.log(dims_hwl / clusters.centroids[idx])
    else:
        residuals[idx] = dims_hwl - clusters.centroids[idx]
    return logits, residuals


def decode_size(logits, residuals, clusters, log_space=False):
    """(H, W, L) from the winning centroid plus its residual triple."""
    logits = np.asarray(logits, dtype=float)
    residuals = np.asarray(residuals, dtype=float).reshape(-1, 3)
    if logits.shape != (clusters.n_clusters,) or len(residuals) != clusters.n_clusters:
        raise ValueError("encoding arity does not match the cluster count")
    idx = int(np.argmax(logits))
    if log_space:
        dims = clusters.centroids[idx] * np.exp(residuals[idx])
    else:
        dims = clusters.centroids[idx] + residuals[idx]
    if np.any(dims <= 0.0):
        raise NonPositiveDims(f"decoded dims {tuple(dims)} not strictly positive")
    return dims


def save_size_clusters(clusters, path):
    """Persist centroids as one 'H W L' line per cluster."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in clusters.centroids:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_size_clusters(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append([float(t) for t in line.split()])
    return SizeClusters(np.array(rows))


@dataclass(frozen=True)
class RpnOutput:
    """Region-proposal head output: location offsets plus raw objectness."""

    t_loc: tuple
    t_obj: float

    def __post_init__(self):
        t = tuple(float(v) for v in self.t_loc)
        if len(t) != 3:
            raise ValueError("t_loc must be a 3-vector")
        object.__setattr__(self, "t_loc", t)

    @property
    def arity(self):
        return 4


@dataclass(frozen=True)
class BrnOutput:
    """Box-regression head output: location, rotation cls+reg, size cls+reg."""

    t_loc: tuple
    rot_logits: np.ndarray
    rot_residuals: np.ndarray
    size_logits: np.ndarray
    size_residuals: np.ndarray

    def __post_init__(self):
        t = tuple(float(v) for v in self.t_loc)
        if len(t) != 3:
            raise ValueError("t_loc must be a 3-vector")
        rl = np.asarray(self.rot_logits, dtype=float).ravel()
        rr = np.asarray(self.rot_residuals, dtype=float).ravel()
        sl = np.asarray(self.size_logits, dtype=float).ravel()
        sr = np.asarray(self.size_residuals, dtype=float).reshape(-1, 3)
        if rl.shape != rr.shape:
            raise ValueError("rotation logits and residuals disagree in length")
        if sl.shape[0] != sr.shape[0]:
            raise ValueError("size logits and residuals disagree in length")
        object.__setattr__(self, "t_loc", t)
        for name, arr in (
            ("rot_logits", rl),
            ("rot_residuals", rr),
            ("size_logits", sl),
            ("size_residuals", sr),
        ):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def arity(self):
        return 3 + 2 * self.rot_logits.shape[0] + 4 * self.size_logits.shape[0]
