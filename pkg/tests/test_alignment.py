import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from frappe_kit.alignment import (RigidTransform, SimilarityTransform,
                                  detect_step_onset, procrustes_align,
                                  resample_pose_sequence, resample_sequence,
                                  rigid_register)
from frappe_kit.errors import (AlignmentError, OnsetNotFoundError,
                               RegistrationError, ValidationError)

from conftest import random_rotation


def test_rigid_identity():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(10, 3))
    xform = rigid_register(pts, pts)
    np.testing.assert_allclose(xform.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(xform.translation, 0.0, atol=1e-12)


def test_rigid_exact_recovery():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(8, 3))
    rot = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    t = np.array([1.0, 2.0, 3.0])
    tgt = src @ rot.T + t
    xform = rigid_register(src, tgt)
    np.testing.assert_allclose(xform.rotation, rot, atol=1e-12)
    np.testing.assert_allclose(xform.translation, t, atol=1e-12)
    residual = np.linalg.norm(xform.apply(src) - tgt, axis=1)
    assert residual.max() < 1e-9


def test_rigid_noisy_recovery_and_grid_search_oracle():
    """Planar 3-marker problem: the SVD solve matches a brute-force sweep of
    z-rotations at 0.5 degree resolution to within 1 degree."""
    rng = np.random.default_rng(2)
    sigma = 1e-3
    src = rng.normal(size=(50, 3))
    rot = random_rotation(rng)
    t = rng.normal(size=3)
    tgt = src @ rot.T + t + rng.normal(0.0, sigma, size=(50, 3))
    xform = rigid_register(src, tgt)
    rms = np.sqrt(np.mean(np.sum((xform.apply(src) - tgt) ** 2, axis=1)))
    assert rms < 2 * sigma

    markers = np.array([[0.4, 0.0, 0.0], [-0.2, 0.3, 0.0], [-0.2, -0.3, 0.0]])
    true_angle = 37.0
    rot_z = Rotation.from_euler("z", true_angle, degrees=True).as_matrix()
    tgt3 = markers @ rot_z.T + np.array([0.1, -0.2, 0.0]) \
        + rng.normal(0.0, 5e-4, size=(3, 3))
    solved = rigid_register(markers, tgt3)
    solved_angle = np.degrees(
        Rotation.from_matrix(solved.rotation).as_euler("zyx")[0])

    best_angle, best_err = None, np.inf
    for deg in np.arange(0.0, 360.0, 0.5):
        cand = Rotation.from_euler("z", deg, degrees=True).as_matrix()
        moved = markers @ cand.T
        moved = moved - moved.mean(axis=0) + tgt3.mean(axis=0)
        err = np.sum((moved - tgt3) ** 2)
        if err < best_err:
            best_err, best_angle = err, deg
    diff = (solved_angle - best_angle + 180.0) % 360.0 - 180.0
    assert abs(diff) <= 1.0


def test_rigid_register_validation():
    pts = np.zeros((2, 3))
    with pytest.raises(RegistrationError):
        rigid_register(pts, pts)
    line = np.stack([np.linspace(0, 1, 5)] * 3, axis=1)  # collinear
    with pytest.raises(RegistrationError):
        rigid_register(line, line)


def test_rigid_equivariance():
    """Re-parameterizing the source frame leaves the residual unchanged."""
    rng = np.random.default_rng(3)
    src = rng.normal(size=(12, 3))
    tgt = rng.normal(size=(12, 3))
    q = random_rotation(rng)
    x1 = rigid_register(src, tgt)
    x2 = rigid_register(src @ q.T, tgt)
    r1 = np.sum((x1.apply(src) - tgt) ** 2)
    r2 = np.sum((x2.apply(src @ q.T) - tgt) ** 2)
    assert abs(r1 - r2) < 1e-9


def test_rigid_transform_validation():
    with pytest.raises(ValidationError):
        RigidTransform(rotation=np.eye(3) * 2.0, translation=np.zeros(3))
    refl = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValidationError):
        RigidTransform(rotation=refl, translation=np.zeros(3))


def test_procrustes_identity_and_scale():
    rng = np.random.default_rng(4)
    gt = rng.normal(size=(9, 3))
    xform, aligned = procrustes_align(gt, gt)
    assert xform.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(aligned, gt, atol=1e-12)

    xform2, aligned2 = procrustes_align(2.0 * gt, gt)
    assert xform2.scale == pytest.approx(0.5, abs=1e-12)
    assert np.linalg.norm(aligned2 - gt) < 1e-9


def test_procrustes_beats_random_search():
    rng = np.random.default_rng(5)
    pred = rng.normal(size=(6, 3))
    gt = rng.normal(size=(6, 3))
    _, aligned = procrustes_align(pred, gt)
    best = np.sum((aligned - gt) ** 2)
    for _ in range(10_000):
        s = rng.uniform(0.2, 3.0)
        rot = random_rotation(rng)
        t = rng.normal(size=3)
        err = np.sum((s * pred @ rot.T + t - gt) ** 2)
        assert best <= err + 1e-12


def test_procrustes_never_worse_than_unaligned():
    rng = np.random.default_rng(6)
    for _ in range(20):
        pred = rng.normal(size=(5, 3))
        gt = rng.normal(size=(5, 3))
        _, aligned = procrustes_align(pred, gt)
        assert (np.linalg.norm(aligned - gt, axis=1).mean()
                <= np.linalg.norm(pred - gt, axis=1).mean() + 1e-12)


def test_procrustes_degenerate():
    pts = np.zeros((5, 3))
    with pytest.raises(AlignmentError):
        procrustes_align(pts, np.random.default_rng(0).normal(size=(5, 3)))
    with pytest.raises(AlignmentError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))


def test_similarity_transform_validation():
    with pytest.raises(ValidationError):
        SimilarityTransform(scale=-1.0, rotation=np.eye(3), translation=np.zeros(3))


def test_resample_integer_stride():
    values = np.arange(8.0).reshape(8, 1)
    out = resample_sequence(values, 120.0, 30.0)
    np.testing.assert_array_equal(out, [[0.0], [4.0]])


def test_resample_linear_ramp_exact():
    t_len = 50
    values = np.arange(t_len, dtype=np.float64).reshape(-1, 1)
    out = resample_sequence(values, 100.0, 30.0)
    expect_len = int(np.floor((t_len - 1) * 30 / 100)) + 1
    assert out.shape[0] == expect_len
    expect = np.arange(expect_len) * (100.0 / 30.0)
    np.testing.assert_allclose(out[:, 0], expect, atol=1e-9)


def test_resample_matches_timestamp_oracle():
    rng = np.random.default_rng(7)
    values = rng.normal(size=(40, 3))
    out = resample_sequence(values, 100.0, 30.0)
    times_src = np.arange(40) / 100.0
    times_dst = np.arange(out.shape[0]) / 30.0
    for d in range(3):
        expect = np.interp(times_dst, times_src, values[:, d])
        np.testing.assert_allclose(out[:, d], expect, atol=1e-9)


def test_resample_identity_at_equal_rates():
    rng = np.random.default_rng(8)
    values = rng.normal(size=(13, 4))
    out = resample_sequence(values, 30.0, 30.0)
    assert np.array_equal(out, values)


def test_resample_rejects_upsampling():
    with pytest.raises(ValidationError):
        resample_sequence(np.zeros((5, 1)), 30.0, 60.0)


def test_resample_poses_integer_stride():
    rng = np.random.default_rng(9)
    thetas = rng.normal(size=(9, 6)) * 0.5
    out = resample_pose_sequence(thetas, 120.0, 30.0)
    np.testing.assert_array_equal(out, thetas[::4])


def test_resample_poses_slerp_oracle():
    """Non-integer ratios interpolate on the rotation manifold: compare with a
    manual geodesic between bracketing keyframes."""
    rng = np.random.default_rng(10)
    thetas = rng.normal(size=(10, 3)) * 0.8
    out = resample_pose_sequence(thetas, 100.0, 30.0)
    pos = np.arange(out.shape[0]) * (100.0 / 30.0)
    for i, p in enumerate(pos):
        lo = int(np.floor(p))
        frac = p - lo
        hi = min(lo + 1, 9)
        r_lo = Rotation.from_rotvec(thetas[lo])
        r_hi = Rotation.from_rotvec(thetas[hi])
        rel = (r_lo.inv() * r_hi).as_rotvec()
        expect = (r_lo * Rotation.from_rotvec(rel * frac)).as_rotvec()
        np.testing.assert_allclose(out[i], expect, atol=1e-9)


def test_resample_poses_avoids_antipode_blowup():
    """Slerp through a near-pi relative rotation stays a valid rotation path."""
    thetas = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 3.1], [0.0, 0.0, 0.2]])
    out = resample_pose_sequence(thetas, 90.0, 60.0)
    norms = np.linalg.norm(out, axis=1)
    assert (norms <= np.pi + 1e-9).all()


def test_detect_step_onset():
    series = np.array([0.0, 0.0, 5.0, 200.0, 700.0, 690.0])
    assert detect_step_onset(series, 100.0) == 3
    assert detect_step_onset(series, 5.0) == 2
    with pytest.raises(OnsetNotFoundError):
        detect_step_onset(np.zeros(10), 1.0)
    with pytest.raises(ValidationError):
        detect_step_onset(series, 0.0)


def test_onset_matches_contact_oracle(biped):
    """A synthesized landing: onset equals the first frame with body contact."""
    from frappe_kit.body_model import BodyState, forward
    from frappe_kit.pressure_sim import (ContactPatchParams, MatGeometry,
                                         synthesize_pressure, total_force)

    mat = MatGeometry.centered(rows=48, cols=64, cell_pitch=0.025)
    heights = np.array([0.30, 0.20, 0.12, 0.05, 0.0, -0.006, -0.008, -0.008])
    mass = 70.0
    forces = []
    first_contact = None
    for i, h in enumerate(heights):
        frame = forward(biped, BodyState(np.zeros(10), np.zeros(24),
                                         np.array([0.0, 0.0, h])))
        pf = synthesize_pressure(frame, mass, 0.0, mat, ContactPatchParams())
        forces.append(total_force(pf))
        touching = (frame.vertices[:, 2] < 0.01).any()
        if touching and first_contact is None:
            first_contact = i
    onset = detect_step_onset(np.array(forces), 0.25 * mass * 9.81)
    assert onset == first_contact


def test_transform_compose_inverse():
    rng = np.random.default_rng(11)
    a = RigidTransform(random_rotation(rng), rng.normal(size=3))
    b = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(7, 3))
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)),
                               atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)
