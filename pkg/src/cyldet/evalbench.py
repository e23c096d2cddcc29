"""Detection evaluation: matching, average precision, recall sweeps, and
the sensor-desynchronization simulator.

Matching follows the usual difficulty-stratified protocol: ground truths
of the evaluated stratum (and every easier one) count toward recall;
harder and ignored ground truths absorb overlapping detections without
rewarding or penalizing them.  The desync simulator rigidly translates
the point cloud together with the 3D labels while leaving 2D boxes and
calibration untouched, emulating a Lidar that drifted relative to the
camera between captures.
"""

from dataclasses import dataclass, replace

import numpy as np

from .geometry import iou_3d, iou_bev
from .kitti import FrameData, PointCloud, WrongFrame, stable_id_hash
from .pipeline import (
    PipelineConfig,
    detect_frame,
    derive_seed,
    gather_cylinder,
    objectness,
    sample_points,
    seed_proposals,
    voxel_downsample,
)

_ACTIVE = {
    "easy": ("easy",),
    "moderate": ("easy", "moderate"),
    "hard": ("easy", "moderate", "hard"),
}


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    difficulty: str = "moderate"
    ap_mode: str = "r11"
    match_metric: str = "iou_3d"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must be in (0, 1]")
        if self.difficulty not in _ACTIVE:
            raise ValueError(f"difficulty must be one of {tuple(_ACTIVE)}")
        if self.ap_mode not in ("r11", "r40"):
            raise ValueError("ap_mode must be r11 or r40")
        if self.match_metric not in ("iou_3d", "iou_bev"):
            raise ValueError("match_metric must be iou_3d or iou_bev")

    @property
    def metric(self):
        return iou_3d if self.match_metric == "iou_3d" else iou_bev


@dataclass(frozen=True)
class DesyncConfig:
    max_xy: float = 0.8
    max_z_vertical: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_xy < 0.0 or self.max_z_vertical < 0.0:
            raise ValueError("translation bounds must be >= 0")


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    matches: tuple      # (det_index, gt_index, iou) per true positive
    ignored_dets: tuple  # detection indices absorbed by ignore-class GTs


def match_detections(detections, gts, cfg=EvalConfig()):
    """Greedy one-to-one matching in descending confidence order.

    Each detection takes the highest-IoU not-yet-matched active ground
    truth if that IoU clears the threshold.  Detections overlapping only
    harder-than-active or ignored ground truths are dropped from the
    tally; everything else unmatched is a false positive.
    """
    active = [i for i, g in enumerate(gts) if g.difficulty in _ACTIVE[cfg.difficulty]]
    ignore = [i for i in range(len(gts)) if i not in active]
    metric = cfg.metric
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].confidence, i))
    matched_gts = set()
    matches, ignored_dets = [], []
    fp = 0
    for det_idx in order:
        det = detections[det_idx]
        best_iou, best_gt = 0.0, None
        for gt_idx in active:
            if gt_idx in matched_gts:
                continue
            iou = metric(det.box3d, gts[gt_idx].box3d)
            if iou > best_iou:
                best_iou, best_gt = iou, gt_idx
        if best_gt is not None and best_iou >= cfg.iou_threshold:
            matched_gts.add(best_gt)
            matches.append((det_idx, best_gt, best_iou))
            continue
        if any(metric(det.box3d, gts[g].box3d) >= cfg.iou_threshold
               for g in ignore):
            ignored_dets.append(det_idx)
            continue
        fp += 1
    return MatchResult(
        tp=len(matches),
        fp=fp,
        fn=len(active) - len(matches),
        matches=tuple(matches),
        ignored_dets=tuple(ignored_dets),
    )


@dataclass(frozen=True)
class PrCurve:
    """Raw (recall, precision) points plus the interpolated AP."""

    points: tuple
    ap: float
    mode: str = "r11"


def _interpolated_ap(points, mode):
    if mode == "r11":
        grid = np.linspace(0.0, 1.0, 11)
    else:
        grid = np.arange(1, 41) / 40.0
    if not points:
        return 0.0, grid
    recalls = np.array([p[0] for p in points])
    precisions = np.array([p[1] for p in points])
    values = []
    for r in grid:
        mask = recalls >= r - 1e-12
        values.append(precisions[mask].max() if np.any(mask) else 0.0)
    return float(np.mean(values)), grid


def average_precision(scored, n_gt, mode="r11"):
    """PR curve and AP from (confidence, is_true_positive) pairs.

    scored need not be sorted; n_gt is the number of active ground truths
    over the whole evaluation set.
    """
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], i))
    tp = fp = 0
    points = []
    for i in order:
        if scored[i][1]:
            tp += 1
        else:
            fp += 1
        recall = tp / n_gt if n_gt else 0.0
        points.append((recall, tp / (tp + fp)))
    ap, _ = _interpolated_ap(points, mode)
    return PrCurve(points=tuple(points), ap=ap, mode=mode)


def evaluate_detections(per_frame, cfg=EvalConfig()):
    """Aggregate matching over (detections, gts) pairs.

    Returns a dict with tp/fp/fn counts, recall, and the PR curve with AP.
    """
    scored = []
    tp = fp = fn = n_active = 0
    for detections, gts in per_frame:
        result = match_detections(detections, gts, cfg)
        tp += result.tp
        fp += result.fp
        fn += result.fn
        n_active += result.tp + result.fn
        matched = {d for d, _, _ in result.matches}
        ignored = set(result.ignored_dets)
        for idx, det in enumerate(detections):
            if idx in ignored:
                continue
            scored.append((det.confidence, idx in matched))
    curve = average_precision(scored, n_active, cfg.ap_mode)
    recall = tp / n_active if n_active else 0.0
    return {
        "tp": tp, "fp": fp, "fn": fn,
        "recall": recall, "ap": curve.ap, "curve": curve,
    }


def proposal_recall(seeds, gts, radius):
    """Fraction of ground truths with a seed within the cylinder radius
    (ground-plane distance), plus seeds per ground truth."""
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 3)
    if not gts:
        return 0.0, 0.0
    captured = 0
    for gt in gts:
        cx, _, cz = gt.box3d.center
        if len(seeds) and np.any(
            np.hypot(seeds[:, 0] - cx, seeds[:, 2] - cz) <= radius
        ):
            captured += 1
    return captured / len(gts), len(seeds) / len(gts)


def detection_recall(detections, gts, cfg=EvalConfig()):
    """Fraction of active ground truths matched at the configured IoU."""
    result = match_detections(detections, gts, cfg)
    total = result.tp + result.fn
    return result.tp / total if total else 0.0


def _clamped_scatter(config, s):
    # ScatterParams requires s strictly inside (0, 1); the s = 0 sweep row
    # is realized as the limit, which collapses to the unscaled solution.
    s_eff = min(max(s, 1e-9), 1.0 - 1e-9)
    return replace(config, scatter=replace(config.scatter, s=s_eff))


def sweep_scatter(frames, monocular, s_values, config=PipelineConfig()):
    """Capture recall and seeds-per-GT of the scattered proposals, per s.

    Counts raw stage-(a) seed regions, before any objectness filtering,
    so the seeds-per-GT column reflects the scatter arithmetic alone.
    Returns (s, recall, proposals_per_gt) rows.
    """
    rows = []
    for s in s_values:
        cfg = _clamped_scatter(config, s)
        captured = total_gts = total_seeds = 0
        for frame in frames:
            seeds = np.array(
                [r.center for _, _, _, r in seed_proposals(frame, monocular, cfg)]
            ).reshape(-1, 3)
            recall, _ = proposal_recall(seeds, frame.labels, cfg.region_radius)
            captured += recall * len(frame.labels)
            total_gts += len(frame.labels)
            total_seeds += len(seeds)
        rows.append((
            float(s),
            captured / total_gts if total_gts else 0.0,
            total_seeds / total_gts if total_gts else 0.0,
        ))
    return rows


def sweep_objectness(frames, predictors, thresholds, config=PipelineConfig()):
    """Capture recall and kept-proposals-per-GT after objectness filtering.

    The proposal head scores every seed region once; each threshold row
    then filters the same scored set, so the sweep is exactly nested.
    Returns (threshold, recall, proposals_per_gt) rows.
    """
    scored_frames = []
    total_gts = 0
    for frame in frames:
        frame_hash = stable_id_hash(frame.frame_id)
        scored = []
        for obj_idx, seed_idx, _, region in seed_proposals(
            frame, predictors.monocular, config
        ):
            gathered = gather_cylinder(frame.cloud, region)
            if len(gathered) == 0:
                continue
            points = sample_points(
                voxel_downsample(gathered, config.voxel_resolution),
                config.sample_count,
                derive_seed(config.seed, frame_hash, obj_idx, seed_idx, 0),
            )
            out = predictors.rpn(points, region, frame)
            scored.append((objectness(out.t_obj), region.center))
        scored_frames.append((scored, frame.labels))
        total_gts += len(frame.labels)

    rows = []
    for threshold in thresholds:
        captured = kept_total = 0
        for scored, gts in scored_frames:
            kept = np.array(
                [center for score, center in scored if score >= threshold]
            ).reshape(-1, 3)
            recall, _ = proposal_recall(kept, gts, config.region_radius)
            captured += recall * len(gts)
            kept_total += len(kept)
        rows.append((
            float(threshold),
            captured / total_gts if total_gts else 0.0,
            kept_total / total_gts if total_gts else 0.0,
        ))
    return rows


def desync_frame(frame, cfg=DesyncConfig()):
    """Rigidly translate the cloud and the 3D labels by one shared random
    offset: ground-plane axes (camera x, z) within max_xy each, vertical
    (camera y) within max_z_vertical.  2D boxes and calibration stay put.
    """
    if frame.cloud.frame != "camera":
        raise WrongFrame("desync expects a camera-frame cloud")
    rng = np.random.default_rng(
        np.random.SeedSequence(
            [cfg.rng_seed & 0xFFFFFFFF, stable_id_hash(frame.frame_id)]
        )
    )
    shift = np.array([
        rng.uniform(-cfg.max_xy, cfg.max_xy),
        rng.uniform(-cfg.max_z_vertical, cfg.max_z_vertical),
        rng.uniform(-cfg.max_xy, cfg.max_xy),
    ])
    points = frame.cloud.points.copy()
    points[:, :3] += shift
    labels = tuple(
        replace(
            lab,
            box3d=replace(
                lab.box3d, center=tuple(np.asarray(lab.box3d.center) + shift)
            ),
        )
        for lab in frame.labels
    )
    return FrameData(
        frame_id=frame.frame_id,
        calib=frame.calib,
        labels=labels,
        cloud=PointCloud(points, frame="camera"),
        image_size=frame.image_size,
    )


def desync_robustness_curve(frames, predictors, magnitudes,
                            config=PipelineConfig(), eval_cfg=EvalConfig(),
                            metric="recall", n_seeds=1, vertical_ratio=0.25,
                            seed=0):
    """(discrepancy, metric) rows: for each translation cap, desync every
    frame, run the detector, and evaluate; averaged over n_seeds draws.

    The vertical cap scales as vertical_ratio times the ground-plane cap.
    metric selects 'recall' or 'map'.
    """
    if metric not in ("recall", "map"):
        raise ValueError("metric must be 'recall' or 'map'")
    rows = []
    for magnitude in magnitudes:
        values = []
        for k in range(n_seeds):
            desync_cfg = DesyncConfig(
                max_xy=magnitude,
                max_z_vertical=magnitude * vertical_ratio,
                rng_seed=derive_seed(seed, k),
            )
            per_frame = []
            for frame in frames:
                shifted = desync_frame(frame, desync_cfg)
                dets = detect_frame(shifted, predictors, config)
                per_frame.append((dets, shifted.labels))
            stats = evaluate_detections(per_frame, eval_cfg)
            values.append(stats["recall"] if metric == "recall" else stats["ap"])
        rows.append((float(magnitude), float(np.mean(values))))
    return rows


def write_csv(path, header, rows):
    """Plain CSV with a header row and '.'-decimal float formatting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format(float(v), ".10g") for v in row) + "\n")
