"""Seeded synthetic dataset builder.

Generates toy-biped participants with randomized shape and mass, drives them
through scripted motion primitives (squat, step, sway, walk, jump, stand) with
band-limited joint noise, keeps the stance feet glued to the ground by solving
the vertical root offset per frame, renders mat pressure, annotates contact,
and optionally rasterizes an orthographic stick-figure image channel.

Everything is a pure function of the config seed: building twice produces
byte-identical directories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..alignment import RigidTransform
from ..body_model import BodyModelDef, forward_sequence, make_biped_model
from ..contact import DEFAULT_RADIUS, DEFAULT_TAU1, DEFAULT_TAU2, annotate_contact
from ..errors import ValidationError
from ..pressure_sim import (GRAVITY, ContactPatchParams, MatGeometry, SkeletonFrame,
                            synthesize_pressure)
from . import container
from .records import (BODY_MODEL_NAME, DatasetManifest, RecordInfo, save_manifest,
                      save_sequence, split_by_participant)

DEFAULT_MOTIONS = ("squat", "step", "sway", "walk", "jump", "stand")

# Front-view orthographic camera: image u = world x, image v = world z
# (forward axis is world -y, so det stays +1).
FRONT_CAMERA = RigidTransform(
    rotation=np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    translation=np.zeros(3))

_SOLE_CLEARANCE = 0.002  # stance soles sit this far below the contact threshold


@dataclass(frozen=True)
class SynthConfig:
    participants: int
    sequences: int            # per participant
    frames: int               # per sequence
    seed: int
    out_dir: Path
    fps: float = 30.0
    # Desk-scale mat default; full-size rigs use 120x160 at 0.01 m.
    mat_rows: int = 48
    mat_cols: int = 64
    cell_pitch: float = 0.025
    image_size: int = 48      # raster height and width
    image_kind: str = "raster"  # "raster" | "features" | "none"
    feature_dim: int = 64     # used when image_kind == "features"
    tau1: float = DEFAULT_TAU1
    tau2: float = DEFAULT_TAU2
    radius: int = DEFAULT_RADIUS
    contact_params: ContactPatchParams = field(default_factory=ContactPatchParams)
    motion_types: tuple[str, ...] = DEFAULT_MOTIONS
    split_ratio: tuple[int, int] = (5, 1)

    def __post_init__(self):
        if self.participants < 1 or self.sequences < 1 or self.frames < 1:
            raise ValidationError("participants, sequences and frames must be positive")
        if self.image_kind not in ("raster", "features", "none"):
            raise ValidationError(f"unknown image_kind {self.image_kind!r}")
        unknown = set(self.motion_types) - set(DEFAULT_MOTIONS)
        if unknown:
            raise ValidationError(f"unknown motion types {sorted(unknown)}")
        object.__setattr__(self, "out_dir", Path(self.out_dir))


def _bandlimited(rng: np.random.Generator, t: np.ndarray, amp: float,
                 components: int = 3, max_hz: float = 0.8) -> np.ndarray:
    out = np.zeros_like(t)
    for _ in range(components):
        f = rng.uniform(0.08, max_hz)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        out += rng.uniform(0.4, 1.0) * np.sin(2.0 * np.pi * f * t + phase)
    return out * (amp / components)


# joint channel offsets for the biped (K=8): axis-angle triplet per joint
_PELVIS, _CHEST, _LHIP, _LKNEE, _LANK, _RHIP, _RKNEE, _RANK = range(8)


def _chan(joint: int, axis: int) -> int:
    return 3 * joint + axis


def generate_motion(rng: np.random.Generator, motion_type: str, frames: int,
                    fps: float, num_joints: int = 8
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Joint angles (T, 3K), horizontal root path (T, 2), flight height (T,)."""
    t = np.arange(frames) / fps
    theta = np.zeros((frames, 3 * num_joints))
    # Leg channels get little noise so stance feet stay within the contact
    # margin; deliberate leg motion is injected per motion type below.
    leg_amp = 0.004 if motion_type == "stand" else 0.01
    for j in range(num_joints):
        amp = 0.03 if j in (_PELVIS, _CHEST) else leg_amp
        for axis in range(3):
            theta[:, _chan(j, axis)] = _bandlimited(rng, t, amp)
    theta[:, _chan(_PELVIS, 2)] += _bandlimited(rng, t, 0.08)  # slow yaw wobble

    flight = np.zeros(frames)
    wander_amp = {"stand": 0.04, "sway": 0.10, "squat": 0.05, "step": 0.06,
                  "walk": 0.22, "jump": 0.05}[motion_type]
    cx = rng.uniform(-0.12, 0.12)
    cy = rng.uniform(-0.10, 0.10)
    path = np.stack([cx + _bandlimited(rng, t, wander_amp, max_hz=0.3),
                     cy + _bandlimited(rng, t, wander_amp, max_hz=0.3)], axis=1)

    # Cadences are brisk so a 20-frame clip at 30 Hz spans at least half a
    # motion cycle; slower cycles leave the swing phase ambiguous per window.
    if motion_type == "squat":
        f = rng.uniform(0.4, 0.7)
        depth = rng.uniform(0.55, 0.9)
        d = depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * f * t))
        # ankle dorsiflexion keeps the feet near-flat; the residual tilt
        # shifts the pressure toward the toes as the squat deepens
        for hip, knee, ankle in ((_LHIP, _LKNEE, _LANK), (_RHIP, _RKNEE, _RANK)):
            theta[:, _chan(hip, 0)] += d
            theta[:, _chan(knee, 0)] += -2.0 * d
            theta[:, _chan(ankle, 0)] += 0.85 * d
        theta[:, _chan(_CHEST, 0)] += -0.4 * d
    elif motion_type in ("step", "walk"):
        f = rng.uniform(0.5, 0.9)
        amp = rng.uniform(0.4, 0.7)
        s = np.sin(2.0 * np.pi * f * t)
        theta[:, _chan(_LHIP, 0)] += amp * np.maximum(0.0, s)
        theta[:, _chan(_RHIP, 0)] += amp * np.maximum(0.0, -s)
        theta[:, _chan(_LKNEE, 0)] += -0.8 * amp * np.maximum(0.0, s)
        theta[:, _chan(_RKNEE, 0)] += -0.8 * amp * np.maximum(0.0, -s)
        if motion_type == "walk":
            path[:, 1] += 0.18 * np.sin(2.0 * np.pi * 0.12 * t + rng.uniform(0, 2 * np.pi))
    elif motion_type == "sway":
        f = rng.uniform(0.2, 0.4)
        amp = rng.uniform(0.08, 0.16)
        s = np.sin(2.0 * np.pi * f * t)
        path[:, 0] += amp * s
        theta[:, _chan(_LHIP, 1)] += 0.06 * s
        theta[:, _chan(_RHIP, 1)] += 0.06 * s
    elif motion_type == "jump":
        f = rng.uniform(0.35, 0.55)
        s = np.sin(2.0 * np.pi * f * t)
        height = rng.uniform(0.10, 0.16)
        flight = height * np.maximum(0.0, s) ** 4
        crouch = 0.5 * np.maximum(0.0, -s) ** 2
        for hip, knee, ankle in ((_LHIP, _LKNEE, _LANK), (_RHIP, _RKNEE, _RANK)):
            theta[:, _chan(hip, 0)] += crouch
            theta[:, _chan(knee, 0)] += -2.0 * crouch
            theta[:, _chan(ankle, 0)] += 0.85 * crouch
    # "stand": base noise only

    return theta, path, flight


def snap_to_ground(model: BodyModelDef, beta: np.ndarray, theta: np.ndarray,
                   path_xy: np.ndarray, flight: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve per-frame vertical translation so the lowest vertex rests slightly
    below the contact threshold (or above it during flight).

    Returns (trans (T, 3), joints (T, K, 3), vertices (T, V, 3)).
    """
    frames = theta.shape[0]
    trans0 = np.concatenate([path_xy, np.zeros((frames, 1))], axis=1)
    joints, verts = forward_sequence(model, beta, theta, trans0)
    min_z = verts[:, :, 2].min(axis=1)
    dz = _SOLE_CLEARANCE - min_z + flight
    trans = trans0.copy()
    trans[:, 2] = dz
    joints = joints.copy()
    verts = verts.copy()
    joints[:, :, 2] += dz[:, None]
    verts[:, :, 2] += dz[:, None]
    return trans, joints, verts


def render_pressure_sequence(verts: np.ndarray, mass_kg: float, fps: float,
                             mat: MatGeometry, params: ContactPatchParams
                             ) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame pressure grids (T, rows, cols) and clipped flags (T,).

    The vertical load is mass * (g + a_z) with a_z the second difference of
    the vertex-centroid height, clamped so the total never goes negative.
    """
    frames = verts.shape[0]
    com_z = verts[:, :, 2].mean(axis=1)
    accel = np.zeros(frames)
    if frames >= 3:
        accel[1:-1] = (com_z[2:] - 2.0 * com_z[1:-1] + com_z[:-2]) * fps * fps
    accel = np.clip(accel, -GRAVITY, 3.0 * GRAVITY)
    grids = np.zeros((frames, mat.rows, mat.cols), dtype=np.float64)
    clipped = np.zeros(frames, dtype=bool)
    for i in range(frames):
        frame = synthesize_pressure(
            SkeletonFrame(joints=verts[i, :1], vertices=verts[i]), mass_kg,
            accel[i], mat, params, timestamp=i / fps)
        grids[i] = frame.grid
        clipped[i] = frame.clipped
    return grids, clipped


def render_stick_rasters(joints: np.ndarray, parent: np.ndarray, camera: RigidTransform,
                         size: int) -> np.ndarray:
    """Orthographic stick-figure rasters (T, size, size) in [0, 1].

    Joints splat as Gaussian blobs with per-joint intensity (j+1)/K; bones are
    drawn as faint sampled segments. The view window is fixed in world space
    (x in [-0.8, 0.8], z in [-0.1, 1.9]), so image position encodes the global
    trajectory the way a fixed calibrated camera would.
    """
    frames, k = joints.shape[:2]
    cam_pts = joints @ camera.rotation.T + camera.translation
    u, v = cam_pts[..., 0], cam_pts[..., 1]
    u0, u1, v0, v1 = -0.8, 0.8, -0.1, 1.9
    px = (u - u0) / (u1 - u0) * (size - 1)
    py = (v1 - v) / (v1 - v0) * (size - 1)

    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.zeros((frames, size, size), dtype=np.float64)
    sigma2 = 1.2 ** 2
    for t in range(frames):
        img = out[t]
        for j in range(k):
            blob = np.exp(-((xx - px[t, j]) ** 2 + (yy - py[t, j]) ** 2) / (2 * sigma2))
            np.maximum(img, blob * (j + 1) / k, out=img)
        for j in range(k):
            p = parent[j]
            if p < 0:
                continue
            for a in np.linspace(0.15, 0.85, 8):
                bx = (1 - a) * px[t, p] + a * px[t, j]
                by = (1 - a) * py[t, p] + a * py[t, j]
                blob = np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * sigma2))
                np.maximum(img, blob * 0.25, out=img)
    return out.astype(np.float32)


def project_joint_features(joints: np.ndarray, camera: RigidTransform,
                           feature_dim: int) -> np.ndarray:
    """Precomputed per-frame feature vectors: projected joint coordinates,
    zero-padded or truncated to feature_dim."""
    cam_pts = joints @ camera.rotation.T + camera.translation
    flat = cam_pts[..., :2].reshape(joints.shape[0], -1)
    out = np.zeros((joints.shape[0], feature_dim), dtype=np.float32)
    take = min(feature_dim, flat.shape[1])
    out[:, :take] = flat[:, :take]
    return out


def build_synthetic_dataset(config: SynthConfig) -> DatasetManifest:
    """Generate, write, and split a synthetic dataset; returns the manifest."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = make_biped_model()
    container.save_body_model(out / BODY_MODEL_NAME, model)
    mat = MatGeometry.centered(rows=config.mat_rows, cols=config.mat_cols,
                               cell_pitch=config.cell_pitch)
    camera = FRONT_CAMERA

    records = []
    for p_idx in range(config.participants):
        pid = f"p{p_idx:02d}"
        prng = np.random.default_rng((config.seed, p_idx))
        mass = float(50.0 + 40.0 * prng.random())
        beta = prng.normal(size=10) * np.array([0.8, 0.8] + [0.3] * 8)
        for s_idx in range(config.sequences):
            motion = config.motion_types[s_idx % len(config.motion_types)]
            srng = np.random.default_rng((config.seed, p_idx, s_idx))
            theta, path_xy, flight = generate_motion(
                srng, motion, config.frames, config.fps, model.num_joints)
            trans, joints, verts = snap_to_ground(model, beta, theta, path_xy, flight)
            grids, clipped = render_pressure_sequence(
                verts, mass, config.fps, mat, config.contact_params)
            grids32 = grids.astype(np.float32)
            labels = annotate_contact(joints, grids32.astype(np.float64), mat,
                                      tau1=config.tau1, tau2=config.tau2,
                                      radius=config.radius)
            images = features = None
            if config.image_kind == "raster":
                images = render_stick_rasters(joints, model.parent, camera,
                                              config.image_size)
            elif config.image_kind == "features":
                features = project_joint_features(joints, camera, config.feature_dim)

            rec_path = f"{pid}/s{s_idx:02d}_{motion}"
            save_sequence(out, rec_path, beta, theta, trans, grids32,
                          labels.labels, images=images, image_features=features)
            records.append(RecordInfo(
                participant_id=pid, motion_type=motion, fps=config.fps,
                frames=config.frames, path=rec_path, mass_kg=mass, beta=beta,
                clipped_frames=int(clipped.sum())))

    if config.image_kind == "raster":
        image_shape: tuple[int, ...] = (config.image_size, config.image_size)
    elif config.image_kind == "features":
        image_shape = (config.feature_dim,)
    else:
        image_shape = ()

    manifest = DatasetManifest(
        root=out, records=tuple(records), mat=mat, camera=camera,
        thresholds={"tau1": config.tau1, "tau2": config.tau2, "radius": config.radius},
        contact_params={"contact_threshold": config.contact_params.contact_threshold,
                        "splat_radius": config.contact_params.splat_radius,
                        "weighting": config.contact_params.weighting},
        image_kind=config.image_kind, image_shape=image_shape, seed=config.seed)
    if config.participants >= 2:
        manifest = split_by_participant(manifest, ratio=config.split_ratio,
                                        seed=config.seed)
    save_manifest(manifest)
    return manifest
