"""Evaluation metrics for pose, trajectory, and physical plausibility.

Conventions (documented here because the names alone do not pin them down):

- Inputs are in meters; every distance metric returns millimeters.
- MPJPE subtracts each skeleton's root joint per frame before averaging joint
  errors; GMPJPE applies no alignment; GTraj is the unaligned root error.
- WMPJPE / WAMPJPE split sequences into consecutive 100-frame segments (a
  final partial segment is kept when it has at least 2 frames). Each segment
  is aligned to ground truth by the rigid transform that best fits ALL JOINTS
  of its first two frames (WMPJPE) or of all its frames (WAMPJPE). Fitting
  only the two root points would leave a free rotation about the root segment
  and misalign even identical sequences, so the fit always uses full joint
  sets. RTE aligns the predicted root trajectory to ground truth with a
  single rigid fit over the whole trajectory (two root points alone cannot
  determine the transform), then averages root error.
- Accel is the mean second-difference magnitude times fps^2 (m/s^2), reported
  as an error against ground-truth acceleration when given.
- Jitter is the mean magnitude of the frame-to-frame CHANGE in acceleration,
  i.e. third difference * fps^2 (acceleration change per frame), divided by
  10 to express it in units of 10 m/s^2. The conventional jerk reading of the
  name conflicts with that unit, so this formula is the contract here and the
  values are not numerically comparable to other implementations.
- The discrete Frechet distance uses the standard dynamic-programming
  recurrence over all monotone couplings.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignmentError, kabsch, procrustes_align
from .errors import ShapeError, ValidationError
from .pressure_sim import MatGeometry, PressureFrame

MM = 1000.0
SEGMENT_FRAMES = 100

METRIC_UNITS = {
    "MPJPE": "mm", "PMPJPE": "mm", "PVE": "mm", "GMPJPE": "mm", "GTraj": "mm",
    "WMPJPE": "mm", "WAMPJPE": "mm", "RTE": "mm", "WBCE": "mm", "FS": "mm",
    "Accel": "m/s^2", "Jitter": "10 m/s^2", "Frechet": "mm",
    "E_com": "mm", "E_cop": "mm",
}


def _check_pair(pred, gt, name):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"{name}: shapes differ, {pred.shape} vs {gt.shape}")
    if pred.ndim != 3 or pred.shape[2] != 3:
        raise ShapeError(f"{name}: expected (T, K, 3), got {pred.shape}")
    return pred, gt


def mpjpe(pred_seq, gt_seq, root_index: int = 0) -> float:
    """Mean per-joint error after per-frame root alignment, mm."""
    pred, gt = _check_pair(pred_seq, gt_seq, "mpjpe")
    pred = pred - pred[:, root_index:root_index + 1]
    gt = gt - gt[:, root_index:root_index + 1]
    return float(np.linalg.norm(pred - gt, axis=2).mean() * MM)


def gmpjpe(pred_seq, gt_seq) -> float:
    """Mean per-joint error with no alignment, mm."""
    pred, gt = _check_pair(pred_seq, gt_seq, "gmpjpe")
    return float(np.linalg.norm(pred - gt, axis=2).mean() * MM)


def gtraj(pred_seq, gt_seq, root_index: int = 0) -> float:
    """Mean root-joint error with no alignment, mm."""
    pred, gt = _check_pair(pred_seq, gt_seq, "gtraj")
    return float(np.linalg.norm(pred[:, root_index] - gt[:, root_index], axis=1).mean() * MM)


def pmpjpe(pred_seq, gt_seq) -> float:
    """Mean joint error after per-frame similarity (Procrustes) alignment, mm.

    Degenerate frames are skipped with a warning.
    """
    pred, gt = _check_pair(pred_seq, gt_seq, "pmpjpe")
    errs = []
    skipped = 0
    for t in range(pred.shape[0]):
        try:
            _, aligned = procrustes_align(pred[t], gt[t])
        except AlignmentError:
            skipped += 1
            continue
        errs.append(np.linalg.norm(aligned - gt[t], axis=1).mean())
    if skipped:
        warnings.warn(f"pmpjpe: skipped {skipped} degenerate frames")
    if not errs:
        raise ValidationError("pmpjpe: every frame was degenerate")
    return float(np.mean(errs) * MM)


def pve(pred_vertices, gt_vertices, pred_root=None, gt_root=None) -> float:
    """Mean per-vertex error, mm, root-aligned like MPJPE.

    Root positions (T, 3) should be the skeleton roots; when omitted the
    per-frame vertex centroid stands in.
    """
    pred, gt = _check_pair(pred_vertices, gt_vertices, "pve")
    if pred_root is None:
        pred_root = pred.mean(axis=1)
    if gt_root is None:
        gt_root = gt.mean(axis=1)
    pred = pred - np.asarray(pred_root)[:, None, :]
    gt = gt - np.asarray(gt_root)[:, None, :]
    return float(np.linalg.norm(pred - gt, axis=2).mean() * MM)


def _second_difference(seq: np.ndarray, fps: float) -> np.ndarray:
    return (seq[2:] - 2.0 * seq[1:-1] + seq[:-2]) * fps * fps


def accel(joints_seq, fps: float = 30.0, gt_seq=None) -> float:
    """Mean acceleration magnitude (m/s^2); acceleration ERROR when gt given."""
    seq = np.asarray(joints_seq, dtype=np.float64)
    if seq.ndim != 3 or seq.shape[0] < 3:
        raise ValidationError(f"accel needs (T>=3, K, 3), got {seq.shape}")
    a_pred = _second_difference(seq, fps)
    if gt_seq is not None:
        gt = np.asarray(gt_seq, dtype=np.float64)
        if gt.shape != seq.shape:
            raise ShapeError(f"accel: shapes differ, {seq.shape} vs {gt.shape}")
        a_pred = a_pred - _second_difference(gt, fps)
    return float(np.linalg.norm(a_pred, axis=2).mean())


def jitter(joints_seq, fps: float = 30.0) -> float:
    """Mean per-frame acceleration change in units of 10 m/s^2 (see module docs)."""
    seq = np.asarray(joints_seq, dtype=np.float64)
    if seq.ndim != 3:
        raise ShapeError(f"jitter expects (T, K, 3), got {seq.shape}")
    if seq.shape[0] < 4:
        raise ValidationError(f"jitter is undefined for T={seq.shape[0]} < 4")
    third = (seq[3:] - 3.0 * seq[2:-1] + 3.0 * seq[1:-2] - seq[:-3]) * fps * fps
    return float(np.linalg.norm(third, axis=2).mean() / 10.0)


def _segments(t_total: int, seg_len: int = SEGMENT_FRAMES):
    out = []
    start = 0
    while start < t_total:
        end = min(start + seg_len, t_total)
        if end - start >= 2:
            out.append((start, end))
        start = end
    return out


def _aligned_segment_error(pred, gt, fit_frames) -> float:
    """Mean joint error (meters) after a rigid fit on the first fit_frames
    frames' full joint sets."""
    rot, trans = kabsch(pred[:fit_frames].reshape(-1, 3),
                        gt[:fit_frames].reshape(-1, 3))
    aligned = pred @ rot.T + trans
    return float(np.linalg.norm(aligned - gt, axis=2).mean())


def wmpjpe(pred_seq, gt_seq, root_index: int = 0, segment: int = SEGMENT_FRAMES) -> float:
    """Per-100-frame-segment joint error after first-two-frame alignment, mm."""
    pred, gt = _check_pair(pred_seq, gt_seq, "wmpjpe")
    if pred.shape[0] < 2:
        raise ValidationError(f"wmpjpe needs T >= 2, got {pred.shape[0]}")
    errs = [_aligned_segment_error(pred[a:b], gt[a:b], 2)
            for a, b in _segments(pred.shape[0], segment)]
    return float(np.mean(errs) * MM)


def wampjpe(pred_seq, gt_seq, root_index: int = 0, segment: int = SEGMENT_FRAMES) -> float:
    """Per-100-frame-segment joint error after all-frame alignment, mm."""
    pred, gt = _check_pair(pred_seq, gt_seq, "wampjpe")
    if pred.shape[0] < 2:
        raise ValidationError(f"wampjpe needs T >= 2, got {pred.shape[0]}")
    errs = []
    for a, b in _segments(pred.shape[0], segment):
        errs.append(_aligned_segment_error(pred[a:b], gt[a:b], b - a))
    return float(np.mean(errs) * MM)


def rte(pred_root_traj, gt_root_traj) -> float:
    """Mean root error after one rigid fit over the whole trajectory, mm."""
    pred = np.asarray(pred_root_traj, dtype=np.float64)
    gt = np.asarray(gt_root_traj, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"rte expects matching (T, 3), got {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 2:
        raise ValidationError(f"rte needs T >= 2, got {pred.shape[0]}")
    rot, trans = kabsch(pred, gt)
    aligned = pred @ rot.T + trans
    return float(np.linalg.norm(aligned - gt, axis=1).mean() * MM)


def wbce(pred_joints_global, contact_labels, ground_height: float = 0.0) -> float:
    """Mean absolute height of in-contact joints above/below the ground, mm.

    Zero when nothing is labeled in contact.
    """
    joints = np.asarray(pred_joints_global, dtype=np.float64)
    labels = np.asarray(contact_labels)
    if joints.ndim != 3 or labels.shape != joints.shape[:2]:
        raise ShapeError(f"wbce: joints {joints.shape} vs labels {labels.shape}")
    mask = labels.astype(bool)
    if not mask.any():
        return 0.0
    heights = np.abs(joints[..., 2] - ground_height)
    return float(heights[mask].mean() * MM)


def foot_sliding(pred_joints_global, contact_labels, foot_joint_ids) -> float:
    """Mean horizontal displacement per in-contact frame pair of foot joints, mm.

    A frame pair counts when the SAME foot joint is labeled in contact in both
    consecutive frames. Zero when no such pair exists.
    """
    joints = np.asarray(pred_joints_global, dtype=np.float64)
    labels = np.asarray(contact_labels).astype(bool)
    if joints.ndim != 3 or labels.shape != joints.shape[:2]:
        raise ShapeError(f"foot_sliding: joints {joints.shape} vs labels {labels.shape}")
    total, pairs = 0.0, 0
    for j in np.asarray(foot_joint_ids, dtype=int):
        both = labels[:-1, j] & labels[1:, j]
        if not both.any():
            continue
        disp = np.linalg.norm(joints[1:, j, :2] - joints[:-1, j, :2], axis=1)
        total += disp[both].sum()
        pairs += int(both.sum())
    if pairs == 0:
        return 0.0
    return float(total / pairs * MM)


def frechet_distance(traj_a, traj_b) -> float:
    """Discrete Frechet distance between trajectories (N, d) and (M, d), mm."""
    a = np.asarray(traj_a, dtype=np.float64)
    b = np.asarray(traj_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"trajectories must be (N, d)/(M, d), got {a.shape} vs {b.shape}")
    if len(a) == 0 or len(b) == 0:
        raise ValidationError("frechet_distance needs non-empty trajectories")
    n, m = len(a), len(b)
    dists = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    table = np.full((n, m), np.inf)
    table[0, 0] = dists[0, 0]
    for i in range(1, n):
        table[i, 0] = max(table[i - 1, 0], dists[i, 0])
    for j in range(1, m):
        table[0, j] = max(table[0, j - 1], dists[0, j])
    for i in range(1, n):
        for j in range(1, m):
            reach = min(table[i - 1, j], table[i - 1, j - 1], table[i, j - 1])
            table[i, j] = max(reach, dists[i, j])
    return float(table[-1, -1] * MM)


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull (monotone chain) of (N, 2) points, counter-clockwise.

    Degenerate inputs return the degenerate polygon: a single point or the two
    extreme points of a collinear set. Empty input returns (0, 2).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return pts.copy()
    uniq = np.unique(pts, axis=0)
    order = np.lexsort((uniq[:, 1], uniq[:, 0]))
    uniq = uniq[order]
    if len(uniq) == 1:
        return uniq.copy()

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    lower: list[np.ndarray] = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in uniq[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 2:  # all points collinear; keep the two extremes
        return np.array([uniq[0], uniq[-1]])
    return hull


def support_region(frame: PressureFrame, mat: MatGeometry, threshold: float) -> np.ndarray:
    """Convex hull (P, 2 world x-y) of cell centers with value >= threshold;
    (0, 2) when no cell is active."""
    active = frame.grid >= threshold
    if not active.any():
        return np.zeros((0, 2))
    rr, cc = np.nonzero(active)
    centers = mat.cell_center_world(rr, cc)
    return convex_hull_2d(centers)


def point_polygon_distance(point, polygon: np.ndarray) -> float:
    """Euclidean distance (meters) from a 2-D point to a convex polygon;
    0 inside or on the boundary. Handles degenerate point/segment polygons."""
    point = np.asarray(point, dtype=np.float64).reshape(2)
    poly = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if len(poly) == 0:
        raise ValidationError("cannot measure distance to an empty polygon")
    if len(poly) == 1:
        return float(np.linalg.norm(point - poly[0]))

    def seg_dist(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else np.clip((p - a) @ ab / denom, 0.0, 1.0)
        return float(np.linalg.norm(p - (a + t * ab)))

    if len(poly) == 2:
        return seg_dist(point, poly[0], poly[1])
    inside = True
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        cross = (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0])
        if cross < 0:  # polygon is counter-clockwise
            inside = False
            break
    if inside:
        return 0.0
    return min(seg_dist(point, poly[i], poly[(i + 1) % len(poly)])
               for i in range(len(poly)))


def _region_deviation(point_traj, support_regions) -> float:
    points = np.asarray(point_traj, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"point trajectory must be (T, 2), got {points.shape}")
    if len(support_regions) != len(points):
        raise ValidationError(
            f"{len(points)} points vs {len(support_regions)} support regions")
    dists = [point_polygon_distance(p, region)
             for p, region in zip(points, support_regions) if len(region) > 0]
    if not dists:
        return 0.0
    return float(np.mean(dists) * MM)


def e_com(com_traj, support_regions) -> float:
    """Mean deviation (mm) of the center-of-mass ground projection from the
    support region; frames with empty support are skipped."""
    return _region_deviation(com_traj, support_regions)


def e_cop(cop_traj, support_regions) -> float:
    """Mean deviation (mm) of the center of pressure from the support region."""
    return _region_deviation(cop_traj, support_regions)


def com_projection(vertices_seq) -> np.ndarray:
    """Ground (x-y) projection of the body center of mass, (T, 2).

    Vertices are weighted uniformly; the toy bodies carry no per-vertex mass.
    """
    verts = np.asarray(vertices_seq, dtype=np.float64)
    if verts.ndim != 3 or verts.shape[2] != 3:
        raise ShapeError(f"vertices must be (T, V, 3), got {verts.shape}")
    return verts[:, :, :2].mean(axis=1)


@dataclass
class MetricsReport:
    """Named metric values with units; serializes to JSON and CSV."""

    values: dict[str, float] = field(default_factory=dict)
    units: dict[str, str] = field(default_factory=dict)

    def set(self, name: str, value: float, unit: str | None = None):
        value = float(value)
        if not np.isfinite(value) or value < -1e-12:
            raise ValidationError(f"metric {name} must be finite and >= 0, got {value}")
        self.values[name] = value
        self.units[name] = unit if unit is not None else METRIC_UNITS.get(name, "")

    def to_json(self) -> str:
        import json
        doc = {name: {"value": self.values[name], "unit": self.units.get(name, "")}
               for name in self.values}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        import json
        doc = json.loads(text)
        report = cls()
        for name, entry in doc.items():
            report.set(name, entry["value"], entry.get("unit", ""))
        return report

    def to_csv_rows(self) -> list[tuple[str, str, str]]:
        return [(name, repr(self.values[name]), self.units.get(name, ""))
                for name in sorted(self.values)]
