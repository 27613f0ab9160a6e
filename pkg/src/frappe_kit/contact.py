"""Per-joint binary ground-contact annotation.

A joint counts as in contact when the summed pressure in the cells around its
vertical projection reaches tau1 AND its clamped height above the ground is at
most tau2 (both comparisons non-strict). Clamped height means penetration
still counts as contact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .pressure_sim import MatGeometry, PressureFrame

# Defaults recover ground-truth foot contact exactly on synthetic standing
# data from the built-in biped; they are config-exposed and recorded in every
# dataset manifest.
DEFAULT_TAU1 = 5.0    # force units
DEFAULT_TAU2 = 0.05   # meters
DEFAULT_RADIUS = 3    # cells


@dataclass(frozen=True)
class ContactLabels:
    """(T, K) binary labels plus the thresholds that produced them."""

    labels: np.ndarray
    tau1: float = DEFAULT_TAU1
    tau2: float = DEFAULT_TAU2
    radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"labels must be (T, K), got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must be binary")
        object.__setattr__(self, "labels", labels.astype(np.uint8))
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValidationError("tau1 and tau2 must be > 0")
        if self.radius < 0:
            raise ValidationError("radius must be >= 0")

    @property
    def num_frames(self) -> int:
        return self.labels.shape[0]

    @property
    def num_joints(self) -> int:
        return self.labels.shape[1]


def neighborhood_pressure(frame: PressureFrame, mat: MatGeometry, joint_xy,
                          radius: float) -> float:
    """Sum of cells whose center lies within `radius` cell pitches (Euclidean,
    in cell units) of the joint's vertical projection.

    radius 0 sums exactly the cell containing the projection. Off-mat
    projections sum only over in-bounds cells.
    """
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    rhat, chat = mat.world_to_cell(np.asarray(joint_xy, dtype=np.float64))
    rows, cols = frame.grid.shape
    if radius == 0:
        r = int(np.floor(rhat + 0.5))
        c = int(np.floor(chat + 0.5))
        if 0 <= r < rows and 0 <= c < cols:
            return float(frame.grid[r, c])
        return 0.0
    r0 = max(int(np.floor(rhat - radius)), 0)
    r1 = min(int(np.ceil(rhat + radius)), rows - 1)
    c0 = max(int(np.floor(chat - radius)), 0)
    c1 = min(int(np.ceil(chat + radius)), cols - 1)
    if r0 > r1 or c0 > c1:
        return 0.0
    rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
    mask = (rr - rhat) ** 2 + (cc - chat) ** 2 <= radius * radius
    return float(frame.grid[r0:r1 + 1, c0:c1 + 1][mask].sum())


def annotate_contact(joints_seq: np.ndarray, frames, mat: MatGeometry,
                     tau1: float = DEFAULT_TAU1, tau2: float = DEFAULT_TAU2,
                     radius: int = DEFAULT_RADIUS,
                     ground_height: float = 0.0) -> ContactLabels:
    """Label joints_seq (T, K, 3) against T pressure frames.

    `frames` is either a list of PressureFrame or a (T, rows, cols) array.
    Label is 1 exactly when neighborhood pressure >= tau1 and clamped ground
    distance <= tau2.
    """
    joints_seq = np.asarray(joints_seq, dtype=np.float64)
    if joints_seq.ndim != 3 or joints_seq.shape[2] != 3:
        raise ShapeError(f"joints_seq must be (T, K, 3), got {joints_seq.shape}")
    if isinstance(frames, np.ndarray):
        frames = [PressureFrame(grid=g) for g in frames]
    if len(frames) != joints_seq.shape[0]:
        raise ValidationError(
            f"sequence length mismatch: {joints_seq.shape[0]} joint frames vs "
            f"{len(frames)} pressure frames")
    if tau1 <= 0 or tau2 <= 0:
        raise ValidationError("tau1 and tau2 must be > 0")

    t_len, k = joints_seq.shape[:2]
    labels = np.zeros((t_len, k), dtype=np.uint8)
    for t in range(t_len):
        dist = np.maximum(joints_seq[t, :, 2] - ground_height, 0.0)
        for j in range(k):
            if dist[j] > tau2:
                continue
            p = neighborhood_pressure(frames[t], mat, joints_seq[t, j, :2], radius)
            if p >= tau1:
                labels[t, j] = 1
    return ContactLabels(labels=labels, tau1=tau1, tau2=tau2, radius=radius)
