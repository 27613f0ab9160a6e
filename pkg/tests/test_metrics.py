import numpy as np
import pytest

from frappe_kit.alignment import procrustes_align
from frappe_kit.errors import ValidationError
from frappe_kit.metrics import (MetricsReport, accel, com_projection, convex_hull_2d,
                                e_com, e_cop, foot_sliding, frechet_distance,
                                gmpjpe, gtraj, jitter, mpjpe, pmpjpe,
                                point_polygon_distance, pve, rte, support_region,
                                wampjpe, wbce, wmpjpe)
from frappe_kit.pressure_sim import MatGeometry, PressureFrame, center_of_pressure

from conftest import random_rotation


def smooth_sequence(rng, t_len=60, k=8, scale=0.4):
    """Band-limited random joint trajectories (T, K, 3)."""
    t = np.arange(t_len) / 30.0
    out = np.zeros((t_len, k, 3))
    for j in range(k):
        for d in range(3):
            for _ in range(3):
                f = rng.uniform(0.1, 1.0)
                out[:, j, d] += rng.uniform(0.3, 1.0) * np.sin(
                    2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    out *= scale / 3.0
    out += rng.normal(size=(1, k, 3))  # skeleton layout offset
    return out


def structured_pair(rng, t_len=60, k=8):
    """(pred, gt) pair mimicking a real estimator: gt under a mild similarity
    transform plus drift and small noise.

    The alignment-ordering properties (PMPJPE <= MPJPE <= GMPJPE, WAMPJPE <=
    WMPJPE) are properties of this regime, where each successive alignment
    removes the dominant error component; they are not theorems for arbitrary
    point sets (a global offset can partially cancel a huge rotation error,
    and root alignment reinjects root noise into the other joints).
    """
    from scipy.spatial.transform import Rotation

    gt = smooth_sequence(rng, t_len, k)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * rng.uniform(0.02, 0.1)).as_matrix()
    scale = rng.uniform(0.95, 1.05)
    offset = rng.normal(size=3) * 0.8  # dominant global offset
    drift = np.linspace(0, 1, t_len)[:, None, None] * rng.normal(size=3) * 0.05
    noise = rng.normal(size=gt.shape) * 0.005
    pred = scale * gt @ rot.T + offset + drift + noise
    return pred, gt


# ---------------------------------------------------------------------------
# position errors


def test_mpjpe_family_uniform_offset():
    rng = np.random.default_rng(0)
    gt = smooth_sequence(rng, 20)
    pred = gt + np.array([0.003, 0.0, 0.004])
    assert mpjpe(pred, gt) == pytest.approx(0.0, abs=1e-9)
    assert gmpjpe(pred, gt) == pytest.approx(5.0, abs=1e-9)
    assert gtraj(pred, gt) == pytest.approx(5.0, abs=1e-9)
    assert mpjpe(gt, gt) == 0.0 and gmpjpe(gt, gt) == 0.0 and gtraj(gt, gt) == 0.0


def test_mpjpe_family_loop_oracle():
    rng = np.random.default_rng(1)
    pred, gt = rng.normal(size=(2, 7, 5, 3))
    total_m, total_g, total_r = 0.0, 0.0, 0.0
    for t in range(7):
        for j in range(5):
            pc = pred[t, j] - pred[t, 0]
            gc = gt[t, j] - gt[t, 0]
            total_m += np.sqrt(((pc - gc) ** 2).sum())
            total_g += np.sqrt(((pred[t, j] - gt[t, j]) ** 2).sum())
        total_r += np.sqrt(((pred[t, 0] - gt[t, 0]) ** 2).sum())
    assert mpjpe(pred, gt) == pytest.approx(total_m / 35 * 1000, rel=1e-9)
    assert gmpjpe(pred, gt) == pytest.approx(total_g / 35 * 1000, rel=1e-9)
    assert gtraj(pred, gt) == pytest.approx(total_r / 7 * 1000, rel=1e-9)


def test_pmpjpe_examples():
    rng = np.random.default_rng(2)
    gt = smooth_sequence(rng, 10)
    assert pmpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert pmpjpe(2.0 * gt, gt) == pytest.approx(0.0, abs=1e-6)


def test_pmpjpe_matches_per_frame_alignment_oracle():
    rng = np.random.default_rng(3)
    pred, gt = structured_pair(rng, 12)
    errs = []
    for t in range(12):
        _, aligned = procrustes_align(pred[t], gt[t])
        errs.append(np.linalg.norm(aligned - gt[t], axis=1).mean())
    assert pmpjpe(pred, gt) == pytest.approx(np.mean(errs) * 1000, rel=1e-12)


def test_pve_examples():
    rng = np.random.default_rng(4)
    gt = rng.normal(size=(6, 30, 3))
    assert pve(gt, gt) == 0.0
    assert pve(gt + np.array([0.1, 0.2, 0.3]), gt) == pytest.approx(0.0, abs=1e-9)
    pred = rng.normal(size=(6, 30, 3))
    roots_p = rng.normal(size=(6, 3))
    roots_g = rng.normal(size=(6, 3))
    total = 0.0
    for t in range(6):
        for v in range(30):
            d = (pred[t, v] - roots_p[t]) - (gt[t, v] - roots_g[t])
            total += np.sqrt((d ** 2).sum())
    assert pve(pred, gt, roots_p, roots_g) == pytest.approx(total / 180 * 1000, rel=1e-9)


# ---------------------------------------------------------------------------
# temporal smoothness


def test_accel_zero_cases():
    t = np.arange(30, dtype=np.float64)
    const_vel = np.stack([t * 0.01, t * -0.02, t * 0.0], axis=1)[:, None, :]
    assert accel(const_vel) == pytest.approx(0.0, abs=1e-9)
    static = np.ones((30, 2, 3))
    assert accel(static) == 0.0


def test_accel_recovers_quadratic():
    a_true = 1.7
    t = np.arange(40) / 30.0
    seq = (0.5 * a_true * t ** 2)[:, None, None] * np.array([[[1.0, 0.0, 0.0]]])
    assert accel(seq, fps=30.0) == pytest.approx(a_true, rel=1e-6)


def test_accel_error_vs_gt():
    rng = np.random.default_rng(5)
    gt = smooth_sequence(rng, 30)
    assert accel(gt, 30.0, gt) == 0.0


def test_jitter_zero_cases():
    t = np.arange(30) / 30.0
    const_acc = (0.5 * 2.0 * t ** 2)[:, None, None] * np.ones((1, 2, 3))
    assert jitter(const_acc) == pytest.approx(0.0, abs=1e-6)
    assert jitter(np.ones((10, 2, 3))) == 0.0


def test_jitter_cubic_analytic():
    # x(t) = c t^3 has constant third derivative 6c; the discrete third
    # difference times fps^3 equals 6c exactly, so jitter = 6c / fps / 10.
    c = 0.9
    fps = 30.0
    t = np.arange(40) / fps
    seq = (c * t ** 3)[:, None, None] * np.array([[[1.0, 0.0, 0.0]]])
    expect = 6.0 * c / fps / 10.0
    assert jitter(seq, fps) == pytest.approx(expect, rel=1e-9)


def test_jitter_needs_four_frames():
    with pytest.raises(ValidationError):
        jitter(np.zeros((3, 2, 3)))


# ---------------------------------------------------------------------------
# windowed / trajectory alignment metrics


def test_wampjpe_absorbs_rigid_transform():
    rng = np.random.default_rng(6)
    gt = smooth_sequence(rng, 120)
    rot = random_rotation(rng)
    pred = gt @ rot.T + rng.normal(size=3)
    assert wampjpe(pred, gt) == pytest.approx(0.0, abs=1e-6)
    assert wmpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert wampjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)


def test_wmpjpe_ge_wampjpe_on_drift():
    rng = np.random.default_rng(7)
    for _ in range(10):
        gt = smooth_sequence(rng, 150)
        drift = np.linspace(0, 1, 150)[:, None, None] * rng.normal(size=3) * 0.3
        pred = gt + drift + rng.normal(size=gt.shape) * 0.005
        assert wmpjpe(pred, gt) >= wampjpe(pred, gt) - 1e-9


def test_segmenting_partial_tail():
    rng = np.random.default_rng(8)
    gt = smooth_sequence(rng, 130)  # 100-frame segment + 30-frame tail
    pred = gt + rng.normal(size=gt.shape) * 0.01
    assert wmpjpe(pred, gt) > 0
    with pytest.raises(ValidationError):
        wmpjpe(gt[:1], gt[:1])


def test_rte_examples():
    rng = np.random.default_rng(9)
    root = smooth_sequence(rng, 80)[:, 0]
    assert rte(root, root) == pytest.approx(0.0, abs=1e-9)
    rot = random_rotation(rng)
    moved = root @ rot.T + np.array([1.0, -2.0, 0.5])
    assert rte(moved, root) == pytest.approx(0.0, abs=1e-6)
    drift = np.linspace(0, 1, 80)[:, None] * np.array([0.2, 0.0, 0.0])
    pred = root + drift
    got = rte(pred, root)
    from frappe_kit.alignment import kabsch

    rot2, t2 = kabsch(pred, root)
    expect = np.mean([np.linalg.norm(rot2 @ p + t2 - g)
                      for p, g in zip(pred, root)]) * 1000
    assert got == pytest.approx(expect, rel=1e-12)


# ---------------------------------------------------------------------------
# contact-aware metrics


def test_wbce_examples():
    joints = np.zeros((2, 3, 3))
    joints[0, 1, 2] = 0.003
    labels = np.zeros((2, 3), dtype=np.uint8)
    labels[0, 1] = 1
    assert wbce(joints, labels) == pytest.approx(3.0, abs=1e-12)
    assert wbce(joints, np.zeros((2, 3), dtype=np.uint8)) == 0.0


def test_wbce_masked_loop_oracle():
    rng = np.random.default_rng(10)
    joints = rng.normal(size=(5, 4, 3))
    labels = rng.integers(0, 2, size=(5, 4)).astype(np.uint8)
    total, count = 0.0, 0
    for t in range(5):
        for j in range(4):
            if labels[t, j]:
                total += abs(joints[t, j, 2])
                count += 1
    expect = (total / count * 1000) if count else 0.0
    assert wbce(joints, labels) == pytest.approx(expect, rel=1e-12)


def test_foot_sliding_cases():
    t_len = 11
    joints = np.zeros((t_len, 2, 3))
    labels = np.ones((t_len, 2), dtype=np.uint8)
    assert foot_sliding(joints, labels, [0, 1]) == 0.0  # stationary contact
    assert foot_sliding(joints, np.zeros_like(labels), [0, 1]) == 0.0  # airborne
    sliding = joints.copy()
    sliding[:, 0, 0] = np.arange(t_len) * 0.002  # 2 mm per frame
    labels2 = np.zeros((t_len, 2), dtype=np.uint8)
    labels2[:, 0] = 1
    assert foot_sliding(sliding, labels2, [0]) == pytest.approx(2.0, abs=1e-9)


# ---------------------------------------------------------------------------
# Frechet distance


def brute_force_frechet(a, b):
    """Minimal leash over ALL monotone couplings, by recursive enumeration."""
    from functools import lru_cache

    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)

    @lru_cache(maxsize=None)
    def go(i, j):
        here = dist[i, j]
        if i == 0 and j == 0:
            return here
        best = np.inf
        if i > 0:
            best = min(best, go(i - 1, j))
        if j > 0:
            best = min(best, go(i, j - 1))
        if i > 0 and j > 0:
            best = min(best, go(i - 1, j - 1))
        return max(here, best)

    return go(len(a) - 1, len(b) - 1)


def test_frechet_examples():
    rng = np.random.default_rng(11)
    traj = rng.normal(size=(10, 3))
    assert frechet_distance(traj, traj) == 0.0
    p, q = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    assert frechet_distance(p, q) == pytest.approx(np.linalg.norm(p - q) * 1000)
    with pytest.raises(ValidationError):
        frechet_distance(np.zeros((0, 3)), traj)


def test_frechet_brute_force_exhaustive():
    rng = np.random.default_rng(12)
    for n in range(1, 7):
        for m in range(1, 7):
            a = rng.normal(size=(n, 3))
            b = rng.normal(size=(m, 3))
            got = frechet_distance(a, b)
            expect = brute_force_frechet(a, b) * 1000
            assert got == pytest.approx(expect, rel=1e-12), (n, m)


def test_frechet_properties():
    rng = np.random.default_rng(13)
    a = rng.normal(size=(8, 3))
    b = rng.normal(size=(5, 3))
    ab = frechet_distance(a, b)
    assert ab == pytest.approx(frechet_distance(b, a), rel=1e-12)
    endpoints = max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1])) * 1000
    assert ab >= endpoints - 1e-9


# ---------------------------------------------------------------------------
# support region and stability deviations


def gift_wrap_hull(points):
    """O(n^2) gift wrapping, independent of the monotone-chain implementation."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    def cross2(u, v):
        return u[0] * v[1] - u[1] * v[0]

    hull = []
    on_hull = pts[np.argmin(pts[:, 0])]
    while True:
        hull.append(on_hull)
        candidate = pts[0]
        for p in pts:
            cross = cross2(candidate - on_hull, p - on_hull)
            if np.allclose(candidate, on_hull) or cross < -1e-12 or (
                    abs(cross) < 1e-12
                    and np.linalg.norm(p - on_hull) > np.linalg.norm(candidate - on_hull)):
                candidate = p
        on_hull = candidate
        if np.allclose(on_hull, hull[0]):
            break
        if len(hull) > len(pts):
            raise RuntimeError("gift wrapping failed")
    return np.array(hull)


def test_support_region_examples():
    mat = MatGeometry.centered(rows=10, cols=10, cell_pitch=0.01)
    grid = np.zeros((10, 10))
    grid[4, 5] = 1.0
    region = support_region(PressureFrame(grid=grid), mat, 0.5)
    assert region.shape == (1, 2)
    np.testing.assert_allclose(region[0], mat.cell_center_world(4, 5))

    grid2 = np.zeros((10, 10))
    grid2[2:6, 3:8] = 2.0
    region2 = support_region(PressureFrame(grid=grid2), mat, 1.0)
    assert region2.shape == (4, 2)  # rectangle hull keeps 4 corners
    corners = mat.cell_center_world(np.array([2, 2, 5, 5]), np.array([3, 7, 3, 7]))
    for c in corners:
        assert np.min(np.linalg.norm(region2 - c, axis=1)) < 1e-12

    empty = support_region(PressureFrame(grid=np.zeros((10, 10))), mat, 0.1)
    assert empty.shape == (0, 2)


def test_hull_matches_gift_wrapping():
    rng = np.random.default_rng(14)
    for _ in range(20):
        pts = rng.normal(size=(rng.integers(3, 30), 2))
        ours = convex_hull_2d(pts)
        ref = gift_wrap_hull(pts)
        assert len(ours) == len(ref)
        # same set of hull vertices
        for p in ref:
            assert np.min(np.linalg.norm(ours - p, axis=1)) < 1e-12


def test_point_polygon_distance_geometry():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    assert point_polygon_distance([0.5, 0.5], square) == 0.0
    assert point_polygon_distance([0.5, 0.0], square) == 0.0  # on boundary
    assert point_polygon_distance([0.5, -0.05], square) == pytest.approx(0.05)
    assert point_polygon_distance([1.5, 1.5], square) == pytest.approx(np.sqrt(0.5))
    assert point_polygon_distance([0.3, 0.4], np.array([[1.0, 1.0]])) == pytest.approx(
        np.hypot(0.7, 0.6))
    seg = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert point_polygon_distance([1.0, 0.3], seg) == pytest.approx(0.3)


def test_point_polygon_distance_sampling_oracle():
    rng = np.random.default_rng(15)
    for _ in range(10):
        pts = rng.normal(size=(8, 2))
        hull = convex_hull_2d(pts)
        query = rng.normal(size=2) * 1.5
        got = point_polygon_distance(query, hull)
        # dense boundary sampling
        samples = []
        for i in range(len(hull)):
            a, b = hull[i], hull[(i + 1) % len(hull)]
            ts = np.linspace(0, 1, 1250)
            samples.append(a[None] + ts[:, None] * (b - a)[None])
        samples = np.concatenate(samples)
        boundary_min = np.linalg.norm(samples - query, axis=1).min()
        if got == 0.0:
            assert _inside_hull(query, hull) or boundary_min < 1e-6
        else:
            assert got == pytest.approx(boundary_min, abs=2e-3)


def _inside_hull(point, hull):
    for i in range(len(hull)):
        a, b = hull[i], hull[(i + 1) % len(hull)]
        if (b[0] - a[0]) * (point[1] - a[1]) - (b[1] - a[1]) * (point[0] - a[0]) < 0:
            return False
    return True


def test_e_com_square_distance():
    square = np.array([[0.0, 0.0], [0.1, 0.0], [0.1, 0.1], [0.0, 0.1]])
    traj = np.array([[0.05, 0.05], [0.05, -0.05]])  # inside, then 50 mm below
    regions = [square, square]
    assert e_com(traj, regions) == pytest.approx(25.0, abs=1e-9)  # mean(0, 50)
    assert e_cop(np.array([[0.05, 0.05]]), [square]) == 0.0
    assert e_com(np.zeros((2, 2)), [np.zeros((0, 2)), np.zeros((0, 2))]) == 0.0


def test_e_cop_self_derived_is_zero():
    mat = MatGeometry.centered(rows=16, cols=16, cell_pitch=0.02)
    rng = np.random.default_rng(16)
    for _ in range(5):
        grid = np.zeros((16, 16))
        rr, cc = rng.integers(0, 16, 6), rng.integers(0, 16, 6)
        grid[rr, cc] = rng.random(6) + 0.2
        frame = PressureFrame(grid=grid)
        cop = center_of_pressure(frame, mat)
        region = support_region(frame, mat, 1e-9)
        assert e_cop(cop[None, :], [region]) == pytest.approx(0.0, abs=1e-9)


def test_com_projection():
    verts = np.zeros((2, 4, 3))
    verts[0, :, 0] = [0, 1, 2, 3]
    verts[0, :, 1] = [4, 4, 4, 4]
    out = com_projection(verts)
    np.testing.assert_allclose(out[0], [1.5, 4.0])


# ---------------------------------------------------------------------------
# ordering properties and the report container


def test_metric_orderings_on_structured_pairs():
    rng = np.random.default_rng(17)
    for _ in range(15):
        pred, gt = structured_pair(rng, rng.integers(30, 120))
        assert pmpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9
        assert mpjpe(pred, gt) <= gmpjpe(pred, gt) + 1e-9
        assert wampjpe(pred, gt) <= wmpjpe(pred, gt) + 1e-9


def test_all_metrics_zero_on_identical():
    rng = np.random.default_rng(18)
    gt = smooth_sequence(rng, 50)
    assert mpjpe(gt, gt) == 0.0
    assert pmpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert gmpjpe(gt, gt) == 0.0
    assert gtraj(gt, gt) == 0.0
    assert wmpjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert wampjpe(gt, gt) == pytest.approx(0.0, abs=1e-9)
    assert rte(gt[:, 0], gt[:, 0]) == pytest.approx(0.0, abs=1e-9)
    assert accel(gt, 30.0, gt) == 0.0
    assert frechet_distance(gt[:, 0], gt[:, 0]) == 0.0


def test_metrics_report_roundtrip(tmp_path):
    report = MetricsReport()
    report.set("MPJPE", 41.8)
    report.set("Jitter", 6.0)
    text = report.to_json()
    back = MetricsReport.from_json(text)
    assert back.values == report.values
    assert back.units["MPJPE"] == "mm"
    assert back.units["Jitter"] == "10 m/s^2"
    rows = report.to_csv_rows()
    assert rows[0][0] == "Jitter"
    with pytest.raises(ValidationError):
        report.set("bad", float("nan"))
