"""Training loss terms and their weighted combinations.

Every term is a mean squared error; the mean runs over ALL elements of the
compared tensors (frames x joints x coordinates), so values are comparable
across batch sizes. Functions accept torch tensors (or anything
``torch.as_tensor`` accepts) and are differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError, ValidationError

PRESSURE_ONLY = "pressure_only"
FRAPPE = "frappe"


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the loss terms.

    Defaults follow the magnitude conventions of iterative-regressor training
    pipelines; they are config-exposed and nothing downstream depends on the
    exact values.
    """

    pose: float = 60.0
    joints_3d: float = 300.0
    joints_2d: float = 300.0
    trans: float = 100.0
    contact: float = 100.0

    def __post_init__(self):
        for name in ("pose", "joints_3d", "joints_2d", "trans", "contact"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class CameraAxis:
    """World-to-camera rigid transform whose forward axis is dropped by the
    orthographic projection (camera frame: x, y image axes, z forward)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        r = self.rotation
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-8 or abs(np.linalg.det(r) - 1) > 1e-8:
            raise ValidationError("camera rotation must be proper orthogonal")

    @classmethod
    def identity(cls) -> "CameraAxis":
        return cls(rotation=np.eye(3), translation=np.zeros(3))


def _pair(pred, gt, name: str) -> tuple[torch.Tensor, torch.Tensor]:
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"{name}: shapes differ, {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return pred, gt


def loss_pose(pred_theta, gt_theta) -> torch.Tensor:
    """Mean squared error between pose parameter vectors."""
    pred, gt = _pair(pred_theta, gt_theta, "loss_pose")
    return ((pred - gt) ** 2).mean()


def loss_3d(pred_joints, gt_joints, root_index: int = 0) -> torch.Tensor:
    """MSE between joint sets (..., K, 3) after subtracting each skeleton's
    root joint, so a uniform offset costs nothing."""
    pred, gt = _pair(pred_joints, gt_joints, "loss_3d")
    if pred.shape[-1] != 3 or pred.ndim < 2:
        raise ShapeError(f"loss_3d expects (..., K, 3), got {tuple(pred.shape)}")
    if not 0 <= root_index < pred.shape[-2]:
        raise ShapeError(f"root_index {root_index} out of range for K={pred.shape[-2]}")
    pred_c = pred - pred[..., root_index:root_index + 1, :]
    gt_c = gt - gt[..., root_index:root_index + 1, :]
    return ((pred_c - gt_c) ** 2).mean()


def _camera_tensors(cam, dtype, device):
    if isinstance(cam, CameraAxis):
        rot, trans = cam.rotation, cam.translation
    else:
        rot, trans = cam
    rot = torch.as_tensor(rot, dtype=dtype, device=device)
    trans = torch.as_tensor(trans, dtype=dtype, device=device)
    return rot, trans


def orthographic_project(joints, cam) -> torch.Tensor:
    """Project (..., K, 3) world joints to (..., K, 2) image coordinates by
    moving to the camera frame and dropping the forward (z) coordinate.

    `cam` is a CameraAxis or an (R, t) pair; R/t may carry leading batch dims
    broadcastable against the joints.
    """
    joints = torch.as_tensor(joints)
    rot, trans = _camera_tensors(cam, joints.dtype, joints.device)
    cam_pts = torch.einsum("...ij,...kj->...ki", rot, joints) + trans[..., None, :]
    return cam_pts[..., :2]


def loss_2d(pred_joints, gt_joints, cam) -> torch.Tensor:
    """MSE between orthographic projections of the two joint sets."""
    pred, gt = _pair(pred_joints, gt_joints, "loss_2d")
    return ((orthographic_project(pred, cam) - orthographic_project(gt, cam)) ** 2).mean()


def loss_trans(pred_trans, gt_trans) -> torch.Tensor:
    """MSE between global translations."""
    pred, gt = _pair(pred_trans, gt_trans, "loss_trans")
    return ((pred - gt) ** 2).mean()


def loss_contact(pred_joints, gt_joints, labels) -> torch.Tensor:
    """MSE over GLOBAL joint positions restricted to in-contact entries.

    labels broadcasts against the joint dims (..., K); the mean runs over the
    selected coordinates. Zero (with gradient graph intact) when nothing is in
    contact in the batch.
    """
    pred, gt = _pair(pred_joints, gt_joints, "loss_contact")
    labels = torch.as_tensor(labels)
    if labels.shape != pred.shape[:-1]:
        raise ShapeError(
            f"labels shape {tuple(labels.shape)} must match joint dims {tuple(pred.shape[:-1])}")
    mask = labels.to(pred.dtype).unsqueeze(-1)
    count = mask.sum() * pred.shape[-1]
    if count.item() == 0:
        return (pred * 0.0).sum()
    return (((pred - gt) ** 2) * mask).sum() / count


def total_loss(terms: dict, weights: LossWeights, mode: str = PRESSURE_ONLY) -> torch.Tensor:
    """Weighted sum of the available terms.

    `terms` maps {"pose", "joints_3d", "joints_2d", "trans", "contact"} to
    scalars; missing terms contribute nothing. pressure_only mode excludes the
    2D projection term regardless of its weight.
    """
    if mode not in (PRESSURE_ONLY, FRAPPE):
        raise ValidationError(f"mode must be '{PRESSURE_ONLY}' or '{FRAPPE}', got {mode!r}")
    active = [("pose", weights.pose), ("joints_3d", weights.joints_3d),
              ("trans", weights.trans), ("contact", weights.contact)]
    if mode == FRAPPE:
        active.append(("joints_2d", weights.joints_2d))
    total = None
    for name, w in active:
        if name not in terms:
            continue
        contrib = w * torch.as_tensor(terms[name])
        total = contrib if total is None else total + contrib
    if total is None:
        return torch.zeros(())
    return total
