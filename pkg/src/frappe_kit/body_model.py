"""Parametric articulated body: shape blending, forward kinematics, linear blend skinning.

A body is defined by template vertices, a joint regressor, skinning weights,
a kinematic tree, and a linear shape-displacement basis. Rest joints are
regressed from the shaped template, axis-angle joint rotations are chained
through the tree, and vertices follow by linear blend skinning. Pose-corrective
blend shapes are intentionally not modeled.

Two built-in toy bodies support tests and synthetic data: a seeded random
kinematic chain (`make_toy_model`) and a fixed biped with articulated legs and
flat feet (`make_biped_model`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ShapeError, ValidationError

ROOT_SENTINEL = -1
NUM_SHAPE_COEFFS = 10
_WEIGHT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class BodyModelDef:
    """Immutable body definition.

    template_vertices : (V, 3) meters
    joint_regressor   : (K, V), rows sum to 1
    skinning_weights  : (V, K), non-negative, rows sum to 1
    parent            : (K,) parent joint index per joint, root entry is -1
    shape_basis       : (V, 3, 10) displacement per shape coefficient
    """

    template_vertices: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    parent: np.ndarray
    shape_basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "template_vertices",
                           np.ascontiguousarray(self.template_vertices, dtype=np.float64))
        object.__setattr__(self, "joint_regressor",
                           np.ascontiguousarray(self.joint_regressor, dtype=np.float64))
        object.__setattr__(self, "skinning_weights",
                           np.ascontiguousarray(self.skinning_weights, dtype=np.float64))
        object.__setattr__(self, "parent", np.ascontiguousarray(self.parent, dtype=np.int32))
        object.__setattr__(self, "shape_basis",
                           np.ascontiguousarray(self.shape_basis, dtype=np.float64))
        self._validate()

    def _validate(self):
        v, k = self.num_vertices, self.num_joints
        if self.template_vertices.shape != (v, 3):
            raise ShapeError(f"template_vertices must be (V, 3), got {self.template_vertices.shape}")
        if self.joint_regressor.shape != (k, v):
            raise ShapeError(f"joint_regressor must be (K, V), got {self.joint_regressor.shape}")
        if self.skinning_weights.shape != (v, k):
            raise ShapeError(f"skinning_weights must be (V, K), got {self.skinning_weights.shape}")
        if self.parent.shape != (k,):
            raise ShapeError(f"parent must be (K,), got {self.parent.shape}")
        if self.shape_basis.shape != (v, 3, NUM_SHAPE_COEFFS):
            raise ShapeError(f"shape_basis must be (V, 3, {NUM_SHAPE_COEFFS}), got {self.shape_basis.shape}")
        for name in ("template_vertices", "joint_regressor", "skinning_weights", "shape_basis"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"{name} contains non-finite values")
        if (self.skinning_weights < -1e-9).any():
            raise ValidationError("skinning_weights must be non-negative")
        if np.abs(self.skinning_weights.sum(axis=1) - 1.0).max() > _WEIGHT_TOL:
            raise ValidationError("skinning_weights rows must sum to 1")
        if np.abs(self.joint_regressor.sum(axis=1) - 1.0).max() > _WEIGHT_TOL:
            raise ValidationError("joint_regressor rows must sum to 1")
        roots = np.flatnonzero(self.parent == ROOT_SENTINEL)
        if len(roots) != 1:
            raise ValidationError(f"parent array must have exactly one root sentinel, found {len(roots)}")
        # Acyclicity: every joint must reach the root in at most K hops.
        for j in range(k):
            cur, hops = j, 0
            while self.parent[cur] != ROOT_SENTINEL:
                cur = int(self.parent[cur])
                hops += 1
                if hops > k or not (0 <= cur < k):
                    raise ValidationError("parent array is cyclic or out of range")

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def root_index(self) -> int:
        return int(np.flatnonzero(self.parent == ROOT_SENTINEL)[0])

    @property
    def rest_joints(self) -> np.ndarray:
        """Regressed joints of the unshaped template, (K, 3)."""
        return self.joint_regressor @ self.template_vertices

    def shaped_rest_joints(self, beta: np.ndarray) -> np.ndarray:
        """Regressed joints after shape blending, (K, 3)."""
        beta = np.asarray(beta, dtype=np.float64).reshape(NUM_SHAPE_COEFFS)
        v_shaped = self.template_vertices + self.shape_basis @ beta
        return self.joint_regressor @ v_shaped


@dataclass(frozen=True)
class BodyState:
    """One frame of body parameters: shape beta (10,), pose theta (3K,) axis-angle
    in radians, global translation trans (3,) meters."""

    beta: np.ndarray
    theta: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(-1))
        if self.beta.shape != (NUM_SHAPE_COEFFS,):
            raise ShapeError(f"beta must have {NUM_SHAPE_COEFFS} entries, got {self.beta.shape}")
        if self.theta.size == 0 or self.theta.size % 3 != 0:
            raise ShapeError(f"theta length must be a positive multiple of 3, got {self.theta.size}")
        if self.trans.shape != (3,):
            raise ShapeError(f"trans must have 3 entries, got {self.trans.shape}")
        for name in ("beta", "theta", "trans"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"{name} contains non-finite values")

    @property
    def num_joints(self) -> int:
        return self.theta.size // 3


@dataclass(frozen=True)
class SkeletonFrame:
    """World-space joints (K, 3) and, optionally, skinned vertices (V, 3)."""

    joints: np.ndarray
    vertices: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=np.float64))
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ShapeError(f"joints must be (K, 3), got {self.joints.shape}")
        if not np.isfinite(self.joints).all():
            raise ValidationError("joints contain non-finite values")
        if self.vertices is not None:
            verts = np.asarray(self.vertices, dtype=np.float64)
            if verts.ndim != 2 or verts.shape[1] != 3:
                raise ShapeError(f"vertices must be (V, 3), got {verts.shape}")
            if not np.isfinite(verts).all():
                raise ValidationError("vertices contain non-finite values")
            object.__setattr__(self, "vertices", verts)


def rodrigues(axis_angle: torch.Tensor) -> torch.Tensor:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3).

    Uses the unnormalized-skew form R = I + a*K + b*K^2 with a = sin(t)/t and
    b = (1 - cos(t))/t^2, switching to the series a = 1 - t^2/6, b = 1/2 - t^2/24
    below t = 1e-8 to avoid dividing by the angle.
    """
    sq = (axis_angle * axis_angle).sum(dim=-1, keepdim=True)
    angle = torch.sqrt(sq.clamp(min=1e-30))
    small = angle < 1e-8
    safe = angle.clamp(min=1e-8)
    a = torch.where(small, 1.0 - sq / 6.0, torch.sin(safe) / safe)
    b = torch.where(small, 0.5 - sq / 24.0, (1.0 - torch.cos(safe)) / (safe * safe))

    x, y, z = axis_angle.unbind(-1)
    zero = torch.zeros_like(x)
    k = torch.stack([
        torch.stack([zero, -z, y], dim=-1),
        torch.stack([z, zero, -x], dim=-1),
        torch.stack([-y, x, zero], dim=-1),
    ], dim=-2)
    eye = torch.eye(3, dtype=axis_angle.dtype, device=axis_angle.device)
    eye = eye.expand(k.shape)
    return eye + a.unsqueeze(-1) * k + b.unsqueeze(-1) * (k @ k)


class TorchBody:
    """Differentiable batched forward pass over a :class:`BodyModelDef`.

    Tensors are immutable after construction; `forward` is pure, so one
    instance can be shared across threads.
    """

    def __init__(self, model: BodyModelDef, dtype: torch.dtype = torch.float64):
        self.model = model
        self.dtype = dtype
        self.template = torch.as_tensor(model.template_vertices, dtype=dtype)
        self.jreg = torch.as_tensor(model.joint_regressor, dtype=dtype)
        self.weights = torch.as_tensor(model.skinning_weights, dtype=dtype)
        self.shape_basis = torch.as_tensor(model.shape_basis, dtype=dtype)
        self.parent = [int(p) for p in model.parent]
        self.root = model.root_index
        # parents first, so world transforms can be composed in one sweep
        order, seen = [], {self.root}
        pending = [j for j in range(model.num_joints) if j != self.root]
        order.append(self.root)
        while pending:
            for j in list(pending):
                if self.parent[j] in seen:
                    order.append(j)
                    seen.add(j)
                    pending.remove(j)
        self.topo_order = order

    def forward(self, beta: torch.Tensor, theta: torch.Tensor, trans: torch.Tensor,
                with_vertices: bool = True) -> tuple[torch.Tensor, torch.Tensor | None]:
        """beta (B, 10), theta (B, 3K), trans (B, 3) -> joints (B, K, 3), vertices (B, V, 3)."""
        k = self.model.num_joints
        if theta.ndim != 2 or theta.shape[1] != 3 * k:
            raise ShapeError(f"theta must be (B, {3 * k}), got {tuple(theta.shape)}")
        bsz = theta.shape[0]
        if beta.ndim == 1:
            beta = beta.unsqueeze(0).expand(bsz, -1)

        v_shaped = self.template + torch.einsum("vdi,bi->bvd", self.shape_basis, beta)
        j_rest = torch.einsum("kv,bvd->bkd", self.jreg, v_shaped)  # (B, K, 3)

        rots = rodrigues(theta.reshape(bsz, k, 3))  # (B, K, 3, 3)

        world_r = [None] * k
        world_t = [None] * k
        for j in self.topo_order:
            p = self.parent[j]
            if p == ROOT_SENTINEL:
                world_r[j] = rots[:, j]
                world_t[j] = j_rest[:, j]
            else:
                offset = j_rest[:, j] - j_rest[:, p]
                world_r[j] = world_r[p] @ rots[:, j]
                world_t[j] = world_t[p] + (world_r[p] @ offset.unsqueeze(-1)).squeeze(-1)
        rot_w = torch.stack(world_r, dim=1)  # (B, K, 3, 3)
        pos_w = torch.stack(world_t, dim=1)  # (B, K, 3)

        joints = pos_w + trans.unsqueeze(1)
        if not with_vertices:
            return joints, None

        # LBS: vertex v follows sum_j w_vj * (R_j (x - j_rest_j) + t_j)
        skin_t = pos_w - (rot_w @ j_rest.unsqueeze(-1)).squeeze(-1)  # (B, K, 3)
        wr = torch.einsum("vk,bkxy->bvxy", self.weights, rot_w)
        wt = torch.einsum("vk,bkx->bvx", self.weights, skin_t)
        verts = (wr @ v_shaped.unsqueeze(-1)).squeeze(-1) + wt + trans.unsqueeze(1)
        return joints, verts


def forward(model: BodyModelDef, state: BodyState) -> SkeletonFrame:
    """World joints and skinned vertices for one frame."""
    if state.theta.size != 3 * model.num_joints:
        raise ShapeError(
            f"state has {state.theta.size} pose entries, model needs {3 * model.num_joints}")
    joints, verts = forward_sequence(model, state.beta,
                                     state.theta[None, :], state.trans[None, :])
    return SkeletonFrame(joints=joints[0], vertices=verts[0])


def forward_sequence(model: BodyModelDef, beta: np.ndarray, thetas: np.ndarray,
                     trans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass: beta (10,), thetas (T, 3K), trans (T, 3) ->
    joints (T, K, 3), vertices (T, V, 3), float64."""
    thetas = np.asarray(thetas, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != 3 * model.num_joints:
        raise ShapeError(f"thetas must be (T, {3 * model.num_joints}), got {thetas.shape}")
    if trans.shape != (thetas.shape[0], 3):
        raise ShapeError(f"trans must be (T, 3), got {trans.shape}")
    if not (np.isfinite(thetas).all() and np.isfinite(trans).all()):
        raise ValidationError("pose inputs contain non-finite values")
    body = TorchBody(model, dtype=torch.float64)
    with torch.no_grad():
        joints, verts = body.forward(
            torch.as_tensor(np.asarray(beta, dtype=np.float64)),
            torch.as_tensor(thetas), torch.as_tensor(trans))
    return joints.numpy(), verts.numpy()


def joint_ground_distances(frame: SkeletonFrame, ground_height: float = 0.0) -> np.ndarray:
    """Per-joint clamped vertical distance max(0, z - ground_height), (K,). Up axis is +z."""
    return np.maximum(frame.joints[:, 2] - float(ground_height), 0.0)


def foot_joint_ids(model: BodyModelDef, tol: float = 0.05) -> np.ndarray:
    """Indices of joints whose rest height is within `tol` of the lowest joint."""
    z = model.rest_joints[:, 2]
    return np.flatnonzero(z <= z.min() + tol)


def make_toy_model(num_joints: int, num_vertices: int, seed: int) -> BodyModelDef:
    """Deterministic random kinematic chain for tests.

    Joints form a chain rising along +z with lateral jitter. Each vertex is
    attached to joint (v mod K); the joint regressor averages the vertices of
    its joint, and skinning splits 0.8/0.2 between a vertex's joint and that
    joint's parent.
    """
    if num_joints < 2:
        raise ValidationError(f"num_joints must be >= 2, got {num_joints}")
    if num_vertices < num_joints:
        raise ValidationError(
            f"num_vertices must be >= num_joints, got {num_vertices} < {num_joints}")
    rng = np.random.default_rng(seed)
    k, v = num_joints, num_vertices

    nodes = np.zeros((k, 3))
    nodes[0] = (0.0, 0.0, 0.1)
    for j in range(1, k):
        step = np.array([0.05 * rng.normal(), 0.05 * rng.normal(),
                         0.12 + 0.03 * rng.random()])
        nodes[j] = nodes[j - 1] + step

    assign = np.arange(v) % k
    template = nodes[assign] + 0.06 * rng.normal(size=(v, 3))

    jreg = np.zeros((k, v))
    for j in range(k):
        members = np.flatnonzero(assign == j)
        jreg[j, members] = 1.0 / len(members)

    parent = np.full(k, ROOT_SENTINEL, dtype=np.int32)
    parent[1:] = np.arange(k - 1)

    weights = np.zeros((v, k))
    for i in range(v):
        j = assign[i]
        if parent[j] == ROOT_SENTINEL:
            weights[i, j] = 1.0
        else:
            weights[i, j] = 0.8
            weights[i, parent[j]] = 0.2

    shape_basis = 0.01 * rng.normal(size=(v, 3, NUM_SHAPE_COEFFS))
    return BodyModelDef(template, jreg, weights, parent, shape_basis)


def make_biped_model() -> BodyModelDef:
    """Fixed two-legged toy body: pelvis, chest, and hip/knee/ankle per leg
    (K=8, V=32), with flat foot soles resting at z = 0.01 m.

    Each joint is regressed from a dedicated pair of marker vertices placed
    symmetrically about it, so rest joints land exactly on the design
    positions. Sole vertices are rigidly skinned to their ankle. Shape
    coefficients: 0 scales height above the ankles, 1 widens the stance,
    2 deepens the torso, 3-9 add small fixed random displacements.
    """
    joints = np.array([
        [0.00, 0.00, 0.90],   # 0 pelvis (root)
        [0.00, 0.00, 1.40],   # 1 chest
        [-0.10, 0.00, 0.88],  # 2 left hip
        [-0.10, 0.00, 0.46],  # 3 left knee
        [-0.10, 0.02, 0.04],  # 4 left ankle
        [0.10, 0.00, 0.88],   # 5 right hip
        [0.10, 0.00, 0.46],   # 6 right knee
        [0.10, 0.02, 0.04],   # 7 right ankle
    ])
    parent = np.array([ROOT_SENTINEL, 0, 0, 2, 3, 0, 5, 6], dtype=np.int32)
    k = joints.shape[0]

    verts = []
    # marker pair per joint
    for j in range(k):
        verts.append(joints[j] + np.array([0.02, 0.0, 0.0]))
        verts.append(joints[j] - np.array([0.02, 0.0, 0.0]))
    # foot soles: heel / mid / toe pairs at z = 0.01
    sole = []
    for foot_x in (-0.10, 0.10):
        for dy in (-0.07, 0.02, 0.11):
            for dx in (-0.03, 0.03):
                sole.append([foot_x + dx, dy, 0.01])
    verts.extend(sole)
    # torso bulk
    verts.extend([[0.12, 0.05, 1.10], [-0.12, 0.05, 1.10],
                  [0.12, -0.05, 1.10], [-0.12, -0.05, 1.10]])
    template = np.array(verts)
    v = template.shape[0]

    jreg = np.zeros((k, v))
    for j in range(k):
        jreg[j, 2 * j] = 0.5
        jreg[j, 2 * j + 1] = 0.5

    weights = np.zeros((v, k))
    for j in range(k):
        weights[2 * j, j] = 1.0
        weights[2 * j + 1, j] = 1.0
    for i in range(16, 22):   # left sole -> left ankle
        weights[i, 4] = 1.0
    for i in range(22, 28):   # right sole -> right ankle
        weights[i, 7] = 1.0
    for i in range(28, 32):   # torso bulk between pelvis and chest
        weights[i, 0] = 0.5
        weights[i, 1] = 0.5

    basis = np.zeros((v, 3, NUM_SHAPE_COEFFS))
    basis[:, 2, 0] = np.maximum(template[:, 2] - 0.04, 0.0) * 0.05       # height
    wide = np.abs(template[:, 0]) >= 0.05
    basis[wide, 0, 1] = np.sign(template[wide, 0]) * 0.02                # stance width
    basis[28:32, 1, 2] = np.sign(template[28:32, 1]) * 0.02              # torso depth
    rng = np.random.default_rng(12345)
    basis[:, :, 3:] = 0.004 * rng.normal(size=(v, 3, NUM_SHAPE_COEFFS - 3))
    return BodyModelDef(template, jreg, weights, parent, basis)
