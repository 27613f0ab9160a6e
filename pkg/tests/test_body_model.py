import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from frappe_kit.body_model import (BodyModelDef, BodyState, SkeletonFrame, TorchBody,
                                   foot_joint_ids, forward, forward_sequence,
                                   joint_ground_distances, make_toy_model)
from frappe_kit.errors import ShapeError, ValidationError

from conftest import random_rotation


def chain_oracle(model: BodyModelDef, state: BodyState):
    """Explicit 4x4 homogeneous-transform composition plus per-vertex LBS loop.

    Independent of the package's batched implementation: rotations come from
    scipy, transforms are composed joint by joint, vertices are skinned one at
    a time.
    """
    k, v = model.num_joints, model.num_vertices
    v_shaped = model.template_vertices + model.shape_basis @ state.beta
    j_rest = model.joint_regressor @ v_shaped
    theta = state.theta.reshape(k, 3)

    world = [None] * k
    order = list(range(k))
    # repeatedly sweep until all transforms resolve (handles any tree order)
    while any(w is None for w in world):
        for j in order:
            if world[j] is not None:
                continue
            r = np.eye(4)
            r[:3, :3] = Rotation.from_rotvec(theta[j]).as_matrix()
            p = model.parent[j]
            if p < 0:
                r[:3, 3] = j_rest[j]
                world[j] = r
            elif world[p] is not None:
                r[:3, 3] = j_rest[j] - j_rest[p]
                world[j] = world[p] @ r

    joints = np.array([world[j][:3, 3] for j in range(k)]) + state.trans
    verts = np.zeros((v, 3))
    for i in range(v):
        acc = np.zeros(3)
        for j in range(k):
            w = model.skinning_weights[i, j]
            if w == 0.0:
                continue
            g = world[j] @ np.array([[1, 0, 0, -j_rest[j][0]],
                                     [0, 1, 0, -j_rest[j][1]],
                                     [0, 0, 1, -j_rest[j][2]],
                                     [0, 0, 0, 1.0]])
            acc += w * (g @ np.append(v_shaped[i], 1.0))[:3]
        verts[i] = acc + state.trans
    return joints, verts


def test_identity_pose_reproduces_template(toy_model):
    state = BodyState(beta=np.zeros(10), theta=np.zeros(3 * toy_model.num_joints),
                      trans=np.zeros(3))
    frame = forward(toy_model, state)
    np.testing.assert_allclose(frame.joints, toy_model.rest_joints, atol=1e-12)
    np.testing.assert_allclose(frame.vertices, toy_model.template_vertices, atol=1e-12)


def test_pure_translation_shifts_everything(toy_model):
    shift = np.array([0.1, 0.0, 0.0])
    base = forward(toy_model, BodyState(np.zeros(10), np.zeros(18), np.zeros(3)))
    moved = forward(toy_model, BodyState(np.zeros(10), np.zeros(18), shift))
    np.testing.assert_allclose(moved.joints, base.joints + shift, atol=1e-12)
    np.testing.assert_allclose(moved.vertices, base.vertices + shift, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_pose_matches_chain_oracle(toy_model, seed):
    rng = np.random.default_rng(seed)
    state = BodyState(beta=rng.normal(size=10) * 0.5,
                      theta=rng.normal(size=18) * 0.8,
                      trans=rng.normal(size=3) * 0.3)
    frame = forward(toy_model, state)
    joints, verts = chain_oracle(toy_model, state)
    np.testing.assert_allclose(frame.joints, joints, atol=1e-9)
    np.testing.assert_allclose(frame.vertices, verts, atol=1e-9)


def test_biped_matches_chain_oracle(biped):
    rng = np.random.default_rng(7)
    state = BodyState(beta=rng.normal(size=10), theta=rng.normal(size=24) * 0.6,
                      trans=rng.normal(size=3) * 0.2)
    frame = forward(biped, state)
    joints, verts = chain_oracle(biped, state)
    np.testing.assert_allclose(frame.joints, joints, atol=1e-9)
    np.testing.assert_allclose(frame.vertices, verts, atol=1e-9)


def test_rigid_invariance(toy_model, rng):
    """Rotating the root pose and adjusting the translation applies (R, t)."""
    state = BodyState(beta=rng.normal(size=10) * 0.3,
                      theta=rng.normal(size=18) * 0.5,
                      trans=rng.normal(size=3) * 0.2)
    frame = forward(toy_model, state)

    rot = random_rotation(rng)
    t_extra = rng.normal(size=3)
    j0 = toy_model.shaped_rest_joints(state.beta)[toy_model.root_index]

    theta2 = state.theta.copy()
    root = toy_model.root_index
    r_root = Rotation.from_rotvec(state.theta[3 * root:3 * root + 3]).as_matrix()
    theta2[3 * root:3 * root + 3] = Rotation.from_matrix(rot @ r_root).as_rotvec()
    trans2 = rot @ state.trans + t_extra - (np.eye(3) - rot) @ j0

    frame2 = forward(toy_model, BodyState(state.beta, theta2, trans2))
    expect_joints = frame.joints @ rot.T + t_extra
    expect_verts = frame.vertices @ rot.T + t_extra
    np.testing.assert_allclose(frame2.joints, expect_joints, atol=1e-6)
    np.testing.assert_allclose(frame2.vertices, expect_verts, atol=1e-6)


def test_shape_linearity(toy_model, rng):
    b1 = rng.normal(size=10)
    b2 = rng.normal(size=10)
    zero = np.zeros(18)
    base = forward(toy_model, BodyState(np.zeros(10), zero, np.zeros(3))).vertices
    d1 = forward(toy_model, BodyState(b1, zero, np.zeros(3))).vertices - base
    d2 = forward(toy_model, BodyState(b2, zero, np.zeros(3))).vertices - base
    d12 = forward(toy_model, BodyState(b1 + b2, zero, np.zeros(3))).vertices - base
    np.testing.assert_allclose(d12, d1 + d2, atol=1e-6)


def test_skinning_convexity(toy_model, rng):
    """Each skinned vertex is the convex combination of its per-joint rigidly
    transformed candidates."""
    state = BodyState(beta=rng.normal(size=10) * 0.3,
                      theta=rng.normal(size=18) * 0.7, trans=np.zeros(3))
    frame = forward(toy_model, state)

    v_shaped = toy_model.template_vertices + toy_model.shape_basis @ state.beta
    j_rest = toy_model.joint_regressor @ v_shaped
    theta = state.theta.reshape(-1, 3)
    world = {}
    for j in range(toy_model.num_joints):  # chain topology: parents precede children
        r = np.eye(4)
        r[:3, :3] = Rotation.from_rotvec(theta[j]).as_matrix()
        p = toy_model.parent[j]
        r[:3, 3] = j_rest[j] if p < 0 else j_rest[j] - j_rest[p]
        world[j] = r if p < 0 else world[p] @ r

    w = toy_model.skinning_weights
    assert (w >= -1e-12).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
    for i in range(0, toy_model.num_vertices, 5):
        candidates = []
        for j in range(toy_model.num_joints):
            g = world[j].copy()
            local = v_shaped[i] - j_rest[j]
            candidates.append(g[:3, :3] @ local + g[:3, 3])
        combo = sum(w[i, j] * candidates[j] for j in range(toy_model.num_joints))
        np.testing.assert_allclose(frame.vertices[i], combo, atol=1e-9)


def test_joint_ground_distances(toy_model):
    frame = SkeletonFrame(joints=np.array([[0, 0, 0.05], [0, 0, -0.01], [1, 2, 0.3]]))
    d = joint_ground_distances(frame, 0.0)
    np.testing.assert_allclose(d, [0.05, 0.0, 0.3])
    # element-wise oracle over a full toy frame
    full = forward(toy_model, BodyState(np.zeros(10), np.zeros(18), np.zeros(3)))
    got = joint_ground_distances(full, 0.02)
    expect = np.array([max(0.0, z - 0.02) for z in full.joints[:, 2]])
    np.testing.assert_allclose(got, expect, atol=0)


def test_make_toy_model_determinism():
    a = make_toy_model(6, 32, 0)
    b = make_toy_model(6, 32, 0)
    for name in ("template_vertices", "joint_regressor", "skinning_weights",
                 "parent", "shape_basis"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_make_toy_model_normalization():
    m = make_toy_model(6, 32, 0)
    np.testing.assert_allclose(m.skinning_weights.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(m.joint_regressor.sum(axis=1), 1.0, atol=1e-6)


def test_make_toy_model_minimal_topology():
    m = make_toy_model(2, 2, 7)
    assert m.parent.tolist() == [-1, 0]


def test_make_toy_model_validation():
    with pytest.raises(ValidationError):
        make_toy_model(1, 5, 0)
    with pytest.raises(ValidationError):
        make_toy_model(4, 3, 0)


def test_forward_dimension_mismatch(toy_model):
    state = BodyState(np.zeros(10), np.zeros(24), np.zeros(3))  # 8 joints vs 6
    with pytest.raises(ShapeError):
        forward(toy_model, state)


def test_state_validation():
    with pytest.raises(ValidationError):
        BodyState(np.zeros(10), np.full(18, np.nan), np.zeros(3))
    with pytest.raises(ShapeError):
        BodyState(np.zeros(9), np.zeros(18), np.zeros(3))
    with pytest.raises(ShapeError):
        BodyState(np.zeros(10), np.zeros(17), np.zeros(3))


def test_model_validation_rejects_bad_weights(toy_model):
    bad = toy_model.skinning_weights.copy()
    bad[0] *= 2.0
    with pytest.raises(ValidationError):
        BodyModelDef(toy_model.template_vertices, toy_model.joint_regressor, bad,
                     toy_model.parent, toy_model.shape_basis)


def test_model_validation_rejects_cycles(toy_model):
    parent = toy_model.parent.copy()
    parent[1] = 2
    parent[2] = 1
    with pytest.raises(ValidationError):
        BodyModelDef(toy_model.template_vertices, toy_model.joint_regressor,
                     toy_model.skinning_weights, parent, toy_model.shape_basis)


def test_model_validation_requires_single_root(toy_model):
    parent = toy_model.parent.copy()
    parent[1] = -1
    with pytest.raises(ValidationError):
        BodyModelDef(toy_model.template_vertices, toy_model.joint_regressor,
                     toy_model.skinning_weights, parent, toy_model.shape_basis)


def test_forward_sequence_matches_single_frames(toy_model, rng):
    thetas = rng.normal(size=(5, 18)) * 0.5
    trans = rng.normal(size=(5, 3)) * 0.2
    beta = rng.normal(size=10) * 0.3
    joints, verts = forward_sequence(toy_model, beta, thetas, trans)
    for t in range(5):
        frame = forward(toy_model, BodyState(beta, thetas[t], trans[t]))
        np.testing.assert_allclose(joints[t], frame.joints, atol=1e-12)
        np.testing.assert_allclose(verts[t], frame.vertices, atol=1e-12)


def test_torch_body_gradients_flow(biped):
    import torch

    body = TorchBody(biped, dtype=torch.float64)
    theta = torch.zeros(1, 24, dtype=torch.float64, requires_grad=True)
    trans = torch.zeros(1, 3, dtype=torch.float64, requires_grad=True)
    beta = torch.zeros(1, 10, dtype=torch.float64)
    joints, verts = body.forward(beta, theta, trans)
    loss = (joints ** 2).sum() + (verts ** 2).sum()
    loss.backward()
    assert torch.isfinite(theta.grad).all()
    assert torch.isfinite(trans.grad).all()
    assert trans.grad.abs().sum() > 0


def test_biped_feet_detected(biped):
    assert foot_joint_ids(biped).tolist() == [4, 7]


def test_biped_shape_changes_geometry(biped):
    tall = forward(biped, BodyState(np.array([2.0] + [0.0] * 9), np.zeros(24),
                                    np.zeros(3)))
    base = forward(biped, BodyState(np.zeros(10), np.zeros(24), np.zeros(3)))
    assert tall.joints[1, 2] > base.joints[1, 2]  # chest is higher
