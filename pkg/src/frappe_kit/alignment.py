"""Rigid/similarity point-set alignment, resampling, and step-onset detection.

Rotation solves use the cross-covariance SVD construction with determinant
correction, so reflections are never returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import (AlignmentError, OnsetNotFoundError, RegistrationError,
                     ShapeError, ValidationError)

_ORTHO_TOL = 1e-9


def _check_rotation(r: np.ndarray, tol: float = 1e-8):
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        raise ValidationError("rotation is not orthogonal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValidationError("rotation determinant is not +1")


@dataclass(frozen=True)
class RigidTransform:
    """Proper rotation (3, 3) plus translation (3,); maps p -> R p + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        _check_rotation(self.rotation)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self o other)(p) = self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class SimilarityTransform:
    """Positive scale, proper rotation, translation; maps p -> s R p + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.scale <= 0:
            raise ValidationError(f"scale must be > 0, got {self.scale}")
        _check_rotation(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.rotation.T) + self.translation


def kabsch(source: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation mapping source onto target.

    Accepts any N >= 1 and performs no degeneracy checks; underdetermined
    configurations (e.g. two points) resolve to the SVD's deterministic
    completion. Use `rigid_register` for validated registration.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ShapeError(f"point sets must both be (N, 3), got {source.shape} vs {target.shape}")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    h = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rot, mu_t - rot @ mu_s


def rigid_register(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Rigid transform minimizing sum ||R s_i + t - g_i||^2 over N >= 3
    non-collinear correspondences."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.ndim != 2 or source.shape[1] != 3:
        raise ShapeError(f"source must be (N, 3), got {source.shape}")
    if source.shape != target.shape:
        raise ShapeError(f"source and target shapes differ: {source.shape} vs {target.shape}")
    if source.shape[0] < 3:
        raise RegistrationError(f"need at least 3 markers, got {source.shape[0]}")
    centered = source - source.mean(axis=0)
    svals = np.linalg.svd(centered, compute_uv=False)
    if svals[1] <= 1e-9 * max(svals[0], 1e-30):
        raise RegistrationError("marker configuration is collinear or coincident")
    rot, trans = kabsch(source, target)
    return RigidTransform(rotation=rot, translation=trans)


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> tuple[SimilarityTransform, np.ndarray]:
    """Optimal similarity transform (scale, rotation, translation) mapping pred
    onto gt in least squares, plus the aligned copy of pred."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"point sets must both be (K, 3), got {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise AlignmentError(f"need at least 3 points, got {pred.shape[0]}")
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    pc = pred - mu_p
    gc = gt - mu_g
    var_p = (pc ** 2).sum()
    if var_p <= 1e-24:
        raise AlignmentError("all points coincide; similarity transform undefined")
    h = pc.T @ gc
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    scale = (s[0] + s[1] + d * s[2]) / var_p
    if scale <= 0:
        raise AlignmentError("degenerate configuration produced non-positive scale")
    trans = mu_g - scale * (rot @ mu_p)
    xform = SimilarityTransform(scale=scale, rotation=rot, translation=trans)
    return xform, xform.apply(pred)


def _target_positions(num_src: int, src_hz: float, dst_hz: float) -> np.ndarray:
    """Fractional source indices sampled by downsampling src_hz -> dst_hz."""
    n_out = int(np.floor((num_src - 1) * dst_hz / src_hz)) + 1
    return np.arange(n_out) * (src_hz / dst_hz)


def resample_sequence(values: np.ndarray, src_hz: float, dst_hz: float) -> np.ndarray:
    """Downsample a (T, ...) series from src_hz to dst_hz.

    Integer ratios take every (src/dst)-th sample starting at index 0;
    non-integer ratios interpolate linearly at the target timestamps.
    Output length is floor((T - 1) * dst / src) + 1.
    """
    if dst_hz <= 0 or src_hz <= 0:
        raise ValidationError("rates must be > 0")
    if src_hz < dst_hz:
        raise ValidationError(f"upsampling not supported: {src_hz} Hz -> {dst_hz} Hz")
    values = np.asarray(values)
    if values.shape[0] == 0:
        raise ValidationError("cannot resample an empty sequence")
    ratio = src_hz / dst_hz
    if abs(ratio - round(ratio)) < 1e-12:
        return values[::int(round(ratio))].copy()
    pos = _target_positions(values.shape[0], src_hz, dst_hz)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, values.shape[0] - 1)
    frac = (pos - lo).reshape((-1,) + (1,) * (values.ndim - 1))
    return (1.0 - frac) * values[lo] + frac * values[hi]


def resample_pose_sequence(thetas: np.ndarray, src_hz: float, dst_hz: float) -> np.ndarray:
    """Downsample axis-angle pose channels (T, 3K).

    Integer ratios stride like `resample_sequence`. Non-integer ratios
    interpolate each joint on the rotation manifold (quaternion slerp) instead
    of linearly on axis-angle, avoiding paths through the antipode.
    """
    if dst_hz <= 0 or src_hz <= 0:
        raise ValidationError("rates must be > 0")
    if src_hz < dst_hz:
        raise ValidationError(f"upsampling not supported: {src_hz} Hz -> {dst_hz} Hz")
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] % 3 != 0:
        raise ShapeError(f"thetas must be (T, 3K), got {thetas.shape}")
    ratio = src_hz / dst_hz
    if abs(ratio - round(ratio)) < 1e-12:
        return thetas[::int(round(ratio))].copy()
    t_len, dims = thetas.shape
    pos = _target_positions(t_len, src_hz, dst_hz)
    out = np.empty((len(pos), dims))
    times = np.arange(t_len, dtype=np.float64)
    for j in range(dims // 3):
        rots = Rotation.from_rotvec(thetas[:, 3 * j:3 * j + 3])
        out[:, 3 * j:3 * j + 3] = Slerp(times, rots)(pos).as_rotvec()
    return out


def detect_step_onset(force_series: np.ndarray, threshold: float) -> int:
    """Index of the first sample with force >= threshold."""
    if threshold <= 0:
        raise ValidationError(f"threshold must be > 0, got {threshold}")
    force_series = np.asarray(force_series, dtype=np.float64).reshape(-1)
    hits = np.flatnonzero(force_series >= threshold)
    if len(hits) == 0:
        raise OnsetNotFoundError(
            f"force series never reached threshold {threshold} "
            f"(max {force_series.max() if len(force_series) else float('nan')})")
    return int(hits[0])
