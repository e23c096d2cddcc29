"""KITTI-format ingestion: calibration, labels, Lidar scans, dataset splits.

File conventions handled here:
  calib/<id>.txt      "KEY: v0 v1 ..." lines; P2 (3x4), R0_rect (3x3),
                      Tr_velo_to_cam (3x4) are required.
  label_2/<id>.txt    15 whitespace fields per object: type, truncated,
                      occluded, alpha, 2D bbox (left top right bottom),
                      dimensions (h w l), location (x y z, bottom-face
                      center, camera frame), rotation_y.
  velodyne/<id>.bin   little-endian float32 (x, y, z, reflectance) records.

Internally a 3D box stores its geometric center; the bottom-face-center
shift happens at parse/emit.  All loaded values are immutable.
"""

import os
import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import Box2D, Box3D

DEFAULT_IMAGE_SIZE = (1242, 375)
DIFFICULTIES = ("easy", "moderate", "hard", "ignored")

_CALIB_KEYS = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
_ORTHONORMAL_TOL = 1e-4


class KittiFormatError(ValueError):
    """Base class for malformed KITTI files."""


class MissingKey(KittiFormatError):
    pass


class MalformedNumber(KittiFormatError):
    pass


class FieldCountMismatch(KittiFormatError):
    pass


class TruncatedRecord(KittiFormatError):
    pass


class WrongFrame(ValueError):
    """Point cloud is tagged with a different frame than the operation needs."""


class MissingFile(FileNotFoundError):
    pass


def _check_rotation(r, name):
    err = np.abs(r @ r.T - np.eye(3)).max()
    if err > _ORTHONORMAL_TOL:
        raise ValueError(f"{name} rotation not orthonormal (deviation {err:.2e})")


@dataclass(frozen=True)
class CalibrationSet:
    """Camera projection and Lidar-to-camera transform for one frame.

    p2 is the 3x4 left color camera projection; r0_rect the 3x3
    rectification rotation; tr_velo_to_cam the 3x4 rigid [R|t] mapping
    Lidar-frame points into the (unrectified) camera frame.
    """

    p2: np.ndarray
    r0_rect: np.ndarray
    tr_velo_to_cam: np.ndarray

    def __post_init__(self):
        p2 = np.asarray(self.p2, dtype=float).reshape(3, 4)
        r0 = np.asarray(self.r0_rect, dtype=float).reshape(3, 3)
        tr = np.asarray(self.tr_velo_to_cam, dtype=float).reshape(3, 4)
        if not np.all(np.isfinite(p2)):
            raise ValueError("P2 has non-finite entries")
        if p2[0, 0] == 0.0 or p2[1, 1] == 0.0:
            raise ValueError("P2 focal terms must be nonzero")
        _check_rotation(r0, "R0_rect")
        _check_rotation(tr[:, :3], "Tr_velo_to_cam")
        for name, arr in (("p2", p2), ("r0_rect", r0), ("tr_velo_to_cam", tr)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class GroundTruthLabel:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: Box2D
    box3d: Box3D
    difficulty: str

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")


@dataclass(frozen=True)
class PointCloud:
    """(N, 4) array of x, y, z, reflectance plus the frame it lives in."""

    points: np.ndarray
    frame: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        if self.frame not in ("lidar", "camera"):
            raise ValueError(f"unknown frame tag {self.frame!r}")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @property
    def xyz(self):
        return self.points[:, :3]


@dataclass(frozen=True)
class FrameData:
    frame_id: str
    calib: CalibrationSet
    labels: tuple
    cloud: PointCloud
    image_size: tuple = DEFAULT_IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "image_size", tuple(self.image_size))


def _as_text(data):
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def parse_calibration(text):
    """Parse KITTI calibration text into a CalibrationSet."""
    values = {}
    for lineno, line in enumerate(_as_text(text).splitlines(), start=1):
        line = line.strip()
        if not line or ":" not in line:
            continue
        key, payload = line.split(":", 1)
        key = key.strip()
        if key not in _CALIB_KEYS:
            continue
        rows, cols = _CALIB_KEYS[key]
        tokens = payload.split()
        if len(tokens) != rows * cols:
            raise FieldCountMismatch(
                f"line {lineno}: key {key} expects {rows * cols} values, got {len(tokens)}"
            )
        try:
            values[key] = np.array([float(t) for t in tokens]).reshape(rows, cols)
        except ValueError as exc:
            raise MalformedNumber(f"line {lineno}: key {key}: {exc}") from None
    for key in _CALIB_KEYS:
        if key not in values:
            raise MissingKey(f"calibration key {key} not found")
    return CalibrationSet(values["P2"], values["R0_rect"], values["Tr_velo_to_cam"])


def emit_calibration(calib):
    """Render a CalibrationSet back to KITTI calibration text."""
    lines = []
    for key, arr in (
        ("P2", calib.p2),
        ("R0_rect", calib.r0_rect),
        ("Tr_velo_to_cam", calib.tr_velo_to_cam),
    ):
        lines.append(key + ": " + " ".join(repr(float(v)) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def assign_difficulty(bbox2d, occlusion, truncation):
    """KITTI difficulty stratum from 2D box height, occlusion, truncation."""
    height = bbox2d.height
    if height >= 40.0 and occlusion <= 0 and truncation <= 0.15:
        return "easy"
    if height >= 25.0 and occlusion <= 1 and truncation <= 0.30:
        return "moderate"
    if height >= 25.0 and occlusion <= 2 and truncation <= 0.50:
        return "hard"
    return "ignored"


def parse_labels(text, classes=("Car",)):
    """Parse KITTI label text into GroundTruthLabel objects.

    classes filters by object type; pass None to admit every class.
    "DontCare" rows carry no valid 3D box and are always dropped.
    """
    labels = []
    for lineno, line in enumerate(_as_text(text).splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 15:
            raise FieldCountMismatch(
                f"line {lineno}: expected 15 fields, got {len(fields)}"
            )
        name = fields[0]
        if name == "DontCare":
            continue
        if classes is not None and name not in classes:
            continue
        try:
            nums = [float(t) for t in fields[1:]]
        except ValueError as exc:
            raise MalformedNumber(f"line {lineno}: {exc}") from None
        truncation, occlusion, alpha = nums[0], int(nums[1]), nums[2]
        bbox = Box2D(*nums[3:7])
        h, w, length = nums[7:10]
        x, y_bottom, z = nums[10:13]
        yaw = nums[13]
        box3d = Box3D((x, y_bottom - h / 2.0, z), (w, h, length), yaw)
        labels.append(
            GroundTruthLabel(
                class_name=name,
                truncation=truncation,
                occlusion=occlusion,
                alpha=alpha,
                bbox2d=bbox,
                box3d=box3d,
                difficulty=assign_difficulty(bbox, occlusion, truncation),
            )
        )
    return labels


def emit_labels(labels):
    """Render labels back to KITTI 15-field text (bottom-face-center y)."""
    lines = []
    for lab in labels:
        w, h, length = lab.box3d.dims
        x, y, z = lab.box3d.center
        b = lab.bbox2d
        fields = [
            lab.class_name,
            repr(lab.truncation),
            str(lab.occlusion),
            repr(lab.alpha),
            repr(b.xmin),
            repr(b.ymin),
            repr(b.xmax),
            repr(b.ymax),
            repr(h),
            repr(w),
            repr(length),
            repr(x),
            repr(y + h / 2.0),
            repr(z),
            repr(lab.box3d.yaw),
        ]
        lines.append(" ".join(fields))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_velodyne(data):
    """Decode a velodyne .bin byte string into a Lidar-frame PointCloud."""
    if len(data) % 16 != 0:
        raise TruncatedRecord(
            f"velodyne stream of {len(data)} bytes is not a multiple of 16"
        )
    pts = np.frombuffer(data, dtype="<f4").astype(float).reshape(-1, 4)
    return PointCloud(pts, frame="lidar")


def emit_velodyne(cloud):
    """Encode a Lidar-frame PointCloud as velodyne .bin bytes."""
    if cloud.frame != "lidar":
        raise WrongFrame(f"expected lidar frame, got {cloud.frame}")
    return np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()


def lidar_to_camera(cloud, calib):
    """Map a Lidar-frame cloud into the rectified camera frame."""
    if cloud.frame != "lidar":
        raise WrongFrame(f"expected lidar frame, got {cloud.frame}")
    xyz = cloud.xyz
    ref = xyz @ calib.tr_velo_to_cam[:, :3].T + calib.tr_velo_to_cam[:, 3]
    cam = ref @ calib.r0_rect.T
    return PointCloud(np.column_stack([cam, cloud.points[:, 3]]), frame="camera")


def camera_to_lidar(cloud, calib):
    """Inverse of lidar_to_camera."""
    if cloud.frame != "camera":
        raise WrongFrame(f"expected camera frame, got {cloud.frame}")
    ref = cloud.xyz @ calib.r0_rect
    lidar = (ref - calib.tr_velo_to_cam[:, 3]) @ calib.tr_velo_to_cam[:, :3]
    return PointCloud(np.column_stack([lidar, cloud.points[:, 3]]), frame="lidar")


def read_split_ids(list_path):
    """Frame ids from a split list file, one per line."""
    with open(list_path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _read_image_sizes(dataset_root):
    path = os.path.join(dataset_root, "image_sizes.txt")
    sizes = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) == 3:
                    sizes[parts[0]] = (int(parts[1]), int(parts[2]))
    return sizes


def load_frame(
    dataset_root,
    frame_id,
    classes=("Car",),
    image_size=DEFAULT_IMAGE_SIZE,
    cloud_frame="camera",
):
    """Load one frame from the {calib, label_2, velodyne} directory layout.

    The Lidar scan is converted to the camera frame by default so the
    whole downstream geometry shares one coordinate system.
    """
    paths = {
        "calib": os.path.join(dataset_root, "calib", frame_id + ".txt"),
        "label": os.path.join(dataset_root, "label_2", frame_id + ".txt"),
        "velodyne": os.path.join(dataset_root, "velodyne", frame_id + ".bin"),
    }
    for kind, path in paths.items():
        if not os.path.exists(path):
            raise MissingFile(f"frame {frame_id}: missing {kind} file {path}")
    with open(paths["calib"], "r", encoding="utf-8") as fh:
        calib = parse_calibration(fh.read())
    with open(paths["label"], "r", encoding="utf-8") as fh:
        labels = parse_labels(fh.read(), classes=classes)
    with open(paths["velodyne"], "rb") as fh:
        cloud = parse_velodyne(fh.read())
    if cloud_frame == "camera":
        cloud = lidar_to_camera(cloud, calib)
    return FrameData(
        frame_id=frame_id,
        calib=calib,
        labels=tuple(labels),
        cloud=cloud,
        image_size=image_size,
    )


def load_split(list_path, dataset_root, classes=("Car",), image_size=None):
    """Load every frame named in a split list file."""
    sizes = _read_image_sizes(dataset_root)
    frames = []
    for frame_id in read_split_ids(list_path):
        size = image_size or sizes.get(frame_id, DEFAULT_IMAGE_SIZE)
        frames.append(
            load_frame(dataset_root, frame_id, classes=classes, image_size=size)
        )
    return frames


def stable_id_hash(frame_id):
    """Deterministic 32-bit hash of a frame id, for seed derivation."""
    return zlib.crc32(str(frame_id).encode("utf-8"))
