"""Deterministic training and evaluation harness.

Training minimizes the weighted loss with AdamW (decoupled weight decay) over
fixed-length clip windows sampled from the train split. Every source of
randomness is seeded, deterministic algorithms are forced, and the run aborts
with the last-good checkpoint if the loss ever goes non-finite. Evaluation
stitches overlap-free window predictions back into full sequences and runs the
whole metric suite against ground truth.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import metrics as metrics_mod
from .body_model import BodyModelDef, TorchBody, foot_joint_ids, forward_sequence
from .dataio import (DatasetManifest, load_dataset_body_model, load_manifest,
                     load_sequence, window_sequence)
from .errors import ConfigError, InternalError, TrainingAborted, ValidationError
from .losses import (FRAPPE, PRESSURE_ONLY, CameraAxis, LossWeights, loss_2d,
                     loss_3d, loss_contact, loss_pose, loss_trans, total_loss)
from .metrics import MetricsReport
from .nets import (FCAMConfig, FrappeConfig, FrappeModel, ImageEncoderConfig,
                   LSAMConfig, PressureEncoderConfig, RegressorConfig,
                   load_checkpoint, save_checkpoint)
from .pressure_sim import ContactPatchParams, PressureFrame, SkeletonFrame, \
    center_of_pressure, synthesize_pressure


@dataclass(frozen=True)
class TrainConfig:
    mode: str = PRESSURE_ONLY
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 5e-5
    batch_size: int = 8
    steps: int = 500
    seed: int = 0
    checkpoint_every: int = 200
    window_stride: int = 10       # training windows overlap 50% by default
    clip_len: int = 20
    feature_dim: int = 64
    heads: int = 4
    iterations: int = 3
    encoder_channels: tuple[int, ...] = (8, 16, 32, 64)
    image_feature_dim: int = 64
    positional: bool = True
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    adam_betas: tuple[float, float] = (0.9, 0.999)
    dtype: str = "float32"
    eval_every: int = 0  # periodic test-split metrics in the run log; 0 = off
    # Seeded train-time augmentation: random mat shifts (targets shifted
    # consistently; x-shifts are skipped in frappe mode because the rasters
    # cannot shift with them), force rescaling (removes the body-mass
    # fingerprint so pose inference transfers across participants), and
    # additive sensor noise in force units.
    augment_shift_cells: int = 4
    augment_force_range: float = 0.35
    augment_noise: float = 0.0

    def __post_init__(self):
        if self.mode not in (PRESSURE_ONLY, FRAPPE):
            raise ConfigError(f"mode must be '{PRESSURE_ONLY}' or '{FRAPPE}', got {self.mode!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "weights" in doc and isinstance(doc["weights"], dict):
            doc["weights"] = LossWeights(**doc["weights"])
        for name in ("encoder_channels", "adam_betas"):
            if name in doc:
                doc[name] = tuple(doc[name])
        return cls(**doc)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RunLog:
    """Per-step loss terms plus the run's config snapshot."""

    config: dict
    seed: int
    optimizer: dict
    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    aborted_at: int | None = None

    def append(self, entry: dict):
        if self.steps and entry["step"] <= self.steps[-1]["step"]:
            raise InternalError("step indices must be strictly increasing")
        self.steps.append(entry)

    def write_jsonl(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            header = {"kind": "header", "config": self.config, "seed": self.seed,
                      "optimizer": self.optimizer}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for entry in self.steps:
                fh.write(json.dumps({"kind": "step", **entry}, sort_keys=True) + "\n")
            for entry in self.evals:
                fh.write(json.dumps({"kind": "eval", **entry}, sort_keys=True) + "\n")
            summary = {"kind": "summary", "wall_time": self.wall_time,
                       "aborted_at": self.aborted_at}
            fh.write(json.dumps(summary, sort_keys=True) + "\n")


def build_model(config: TrainConfig, manifest: DatasetManifest,
                body: BodyModelDef) -> FrappeModel:
    k = body.num_joints
    enc = PressureEncoderConfig(rows=manifest.mat.rows, cols=manifest.mat.cols,
                                channels=config.encoder_channels,
                                feature_dim=config.feature_dim)
    lsam = LSAMConfig(feature_dim=config.feature_dim, heads=config.heads,
                      max_len=config.clip_len, positional=config.positional)
    reg = RegressorConfig(feature_dim=config.feature_dim, param_dim=3 * k + 3,
                          iterations=config.iterations)
    fcam = image_encoder = None
    feature_input_dim = None
    if config.mode == FRAPPE:
        if manifest.image_kind == "none":
            raise ConfigError("frappe mode needs a dataset with an image channel")
        fcam = FCAMConfig(query_dim=config.feature_dim, kv_dim=config.image_feature_dim,
                          heads=config.heads, max_len=config.clip_len,
                          positional=config.positional)
        if manifest.image_kind == "raster":
            image_encoder = ImageEncoderConfig(size=manifest.image_shape[0],
                                               feature_dim=config.image_feature_dim)
        else:
            feature_input_dim = manifest.image_shape[0]
    return FrappeModel(FrappeConfig(
        mode=config.mode, encoder=enc, lsam=lsam, regressor=reg, fcam=fcam,
        image_encoder=image_encoder, feature_input_dim=feature_input_dim,
        dtype=config.dtype))


def _resolve_manifest(manifest) -> DatasetManifest:
    if isinstance(manifest, DatasetManifest):
        return manifest
    return load_manifest(manifest)


def _augment_batch(rng, mat, pressure, trans, joints, shift_cells: int,
                   force_range: float, noise: float, allow_col_shift: bool) -> None:
    """In-place seeded augmentation of one batch.

    Shifts are drawn per window within the window's free margin, so no
    footprint ever leaves the mat; ground-truth translations and joints shift
    by the same world offset. Force rescaling leaves geometry untouched.
    """
    bsz, _, rows, cols = pressure.shape
    for i in range(bsz):
        grids = pressure[i]
        if shift_cells > 0:
            occupied = grids.any(axis=0)
            rr, cc = np.nonzero(occupied)
            dr = dc = 0
            if rr.size:
                lo = -min(shift_cells, int(rr.min()))
                hi = min(shift_cells, rows - 1 - int(rr.max()))
                if hi >= lo:
                    dr = int(rng.integers(lo, hi + 1))
                if allow_col_shift:
                    lo = -min(shift_cells, int(cc.min()))
                    hi = min(shift_cells, cols - 1 - int(cc.max()))
                    if hi >= lo:
                        dc = int(rng.integers(lo, hi + 1))
            if dr or dc:
                grids[:] = np.roll(grids, (dr, dc), axis=(1, 2))
                delta = mat.rotation @ np.array(
                    [dc * mat.cell_pitch, dr * mat.cell_pitch, 0.0])
                trans[i] += delta
                joints[i] += delta
        if force_range > 0:
            grids *= np.exp(rng.uniform(-force_range, force_range))
        if noise > 0:
            np.maximum(grids + rng.normal(0.0, noise, grids.shape), 0.0, out=grids)


def _load_split(manifest: DatasetManifest, which: str):
    records = manifest.records_for_split(which)
    if not records:
        raise ValidationError(f"split {which!r} has no records")
    return [load_sequence(manifest, rec) for rec in records]


def _gt_joints(body: BodyModelDef, record) -> np.ndarray:
    joints, _ = forward_sequence(body, record.beta, record.thetas, record.trans)
    return joints


def train(config: TrainConfig, manifest, out_dir) -> tuple[Path, RunLog]:
    """Train on the manifest's train split; returns (checkpoint dir, run log).

    Deterministic end to end for a fixed (config, dataset, seed) on one
    platform. Writes out_dir/checkpoint, out_dir/runlog.jsonl and a config
    snapshot.
    """
    manifest = _resolve_manifest(manifest)
    if manifest.split is None:
        raise ConfigError("manifest has no train/test split")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    body = load_dataset_body_model(manifest)
    dtype = {"float32": torch.float32, "float64": torch.float64}[config.dtype]

    records = _load_split(manifest, "train")
    train_participants = set(r.participant_id for r in records)

    windows = []
    for rec in records:
        gt_joints = _gt_joints(body, rec)
        for clip in window_sequence(rec, length=config.clip_len,
                                    stride=config.window_stride):
            windows.append((clip, gt_joints[clip.start:clip.start + clip.length]))
    if not windows:
        raise ValidationError(
            f"no training windows: sequences shorter than clip_len={config.clip_len}?")

    theta_mean = np.mean([c.thetas.mean(axis=0) for c, _ in windows], axis=0)
    trans_mean = np.mean([c.trans.mean(axis=0) for c, _ in windows], axis=0)

    was_deterministic = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    t_start = time.time()
    try:
        torch.manual_seed(config.seed)
        model = build_model(config, manifest, body)
        model.regressor.set_mean(np.concatenate([theta_mean, trans_mean]))
        model.train()
        tbody = TorchBody(body, dtype=dtype)
        cam = CameraAxis(rotation=manifest.camera.rotation,
                         translation=manifest.camera.translation)
        cam_r = torch.as_tensor(cam.rotation, dtype=dtype)
        cam_t = torch.as_tensor(cam.translation, dtype=dtype)

        optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr,
                                      betas=config.adam_betas,
                                      weight_decay=config.weight_decay)
        runlog = RunLog(config=config.to_dict(), seed=config.seed,
                        optimizer={"name": "AdamW", "lr": config.lr,
                                   "betas": list(config.adam_betas),
                                   "weight_decay": config.weight_decay,
                                   "grad_clip": config.grad_clip})
        rng = np.random.default_rng(config.seed)
        ckpt_dir = out_dir / "checkpoint"

        for step in range(1, config.steps + 1):
            idx = rng.integers(0, len(windows), size=config.batch_size)
            batch = [windows[i] for i in idx]
            batch_participants = set(c.participant_id for c, _ in batch)
            if not batch_participants <= train_participants:
                raise InternalError(
                    f"test participants leaked into a batch: "
                    f"{batch_participants - train_participants}")

            pressure_np = np.stack([c.pressure for c, _ in batch]).astype(np.float64)
            trans_np = np.stack([c.trans for c, _ in batch]).copy()
            joints_np = np.stack([j for _, j in batch]).copy()
            _augment_batch(rng, manifest.mat, pressure_np, trans_np, joints_np,
                           config.augment_shift_cells, config.augment_force_range,
                           config.augment_noise,
                           allow_col_shift=(config.mode != FRAPPE))

            pressure = torch.as_tensor(pressure_np, dtype=dtype)
            theta_gt = torch.as_tensor(
                np.stack([c.thetas for c, _ in batch]), dtype=dtype)
            trans_gt = torch.as_tensor(trans_np, dtype=dtype)
            labels = torch.as_tensor(np.stack([c.contact for c, _ in batch]))
            joints_gt = torch.as_tensor(joints_np, dtype=dtype)
            beta = torch.as_tensor(np.stack([c.beta for c, _ in batch]), dtype=dtype)

            images = features = None
            if config.mode == FRAPPE:
                if manifest.image_kind == "raster":
                    images = torch.as_tensor(
                        np.stack([c.images for c, _ in batch]), dtype=dtype)
                else:
                    features = torch.as_tensor(
                        np.stack([c.image_features for c, _ in batch]), dtype=dtype)

            theta_p, trans_p = model(pressure, images=images, image_features=features)

            bsz, length = theta_p.shape[:2]
            beta_flat = beta.unsqueeze(1).expand(-1, length, -1).reshape(bsz * length, -1)
            joints_p, _ = tbody.forward(beta_flat, theta_p.reshape(bsz * length, -1),
                                        trans_p.reshape(bsz * length, -1),
                                        with_vertices=False)
            joints_p = joints_p.reshape(bsz, length, -1, 3)

            terms = {
                "pose": loss_pose(theta_p, theta_gt),
                "joints_3d": loss_3d(joints_p, joints_gt, root_index=body.root_index),
                "trans": loss_trans(trans_p, trans_gt),
                "contact": loss_contact(joints_p, joints_gt, labels),
            }
            if config.mode == FRAPPE:
                terms["joints_2d"] = loss_2d(joints_p, joints_gt, (cam_r, cam_t))
            loss = total_loss(terms, config.weights, mode=config.mode)

            if not torch.isfinite(loss):
                save_checkpoint(ckpt_dir, model, step=step - 1, seed=config.seed,
                                extra={"aborted": True})
                runlog.aborted_at = step
                runlog.wall_time = time.time() - t_start
                runlog.write_jsonl(out_dir / "runlog.jsonl")
                raise TrainingAborted(
                    f"non-finite loss at step {step}; last-good checkpoint saved",
                    checkpoint_dir=ckpt_dir, step=step - 1)

            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()

            entry = {"step": step, "total": float(loss.detach())}
            entry.update({k: float(v.detach()) for k, v in terms.items()})
            runlog.append(entry)

            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                save_checkpoint(ckpt_dir, model, step=step, seed=config.seed)

            if config.eval_every > 0 and step % config.eval_every == 0:
                model.eval()
                report = evaluate(model, manifest, split="test")
                model.train()
                runlog.evals.append({"step": step, "metrics": report.values})

        save_checkpoint(ckpt_dir, model, step=config.steps, seed=config.seed)
        runlog.wall_time = time.time() - t_start
        runlog.write_jsonl(out_dir / "runlog.jsonl")
        (out_dir / "train_config.json").write_text(
            json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n",
            encoding="utf-8")
        return ckpt_dir, runlog
    finally:
        torch.use_deterministic_algorithms(was_deterministic)


def _stitch_predictions(model: FrappeModel, record, clip_len: int,
                        dtype: torch.dtype) -> tuple[np.ndarray, np.ndarray]:
    """Overlap-free window predictions reassembled per frame.

    Windows start at multiples of clip_len; when T is not a multiple, one
    extra window anchored at the sequence end fills only the uncovered tail
    frames.
    """
    t_total = record.num_frames
    theta_out = np.zeros((t_total, model.theta_dim))
    trans_out = np.zeros((t_total, 3))
    starts = list(range(0, t_total - clip_len + 1, clip_len))
    covered = starts[-1] + clip_len if starts else 0
    tail_start = None
    if covered < t_total:
        tail_start = t_total - clip_len
        starts.append(tail_start)

    for start in starts:
        sl = slice(start, start + clip_len)
        pressure = torch.as_tensor(record.pressure[sl], dtype=dtype)
        images = features = None
        if model.config.mode == FRAPPE:
            if model.image_encoder is not None:
                images = torch.as_tensor(record.images[sl], dtype=dtype)
            else:
                features = torch.as_tensor(record.image_features[sl], dtype=dtype)
        with torch.no_grad():
            theta_p, trans_p = model(pressure, images=images, image_features=features)
        theta_np = theta_p.numpy().astype(np.float64)
        trans_np = trans_p.numpy().astype(np.float64)
        if start == tail_start:
            keep = covered - start
            theta_out[covered:] = theta_np[keep:]
            trans_out[covered:] = trans_np[keep:]
        else:
            theta_out[sl] = theta_np
            trans_out[sl] = trans_np
    return theta_out, trans_out


def evaluate(checkpoint, manifest, split: str = "test", bypass_gt: bool = False,
             baseline: str | None = None, support_threshold: float = 1e-6,
             clip_len: int | None = None) -> MetricsReport:
    """Run the full metric suite for a checkpoint on one split.

    bypass_gt feeds ground truth as the prediction (every error metric must
    come out zero). baseline="mean-pose" evaluates the constant
    mean-parameter predictor stored in the checkpoint. Metrics are computed
    per sequence and averaged weighted by frame count.
    """
    manifest = _resolve_manifest(manifest)
    if isinstance(checkpoint, FrappeModel):
        model = checkpoint
    else:
        model, _ = load_checkpoint(checkpoint)
    model.eval()
    if baseline not in (None, "mean-pose"):
        raise ConfigError(f"unknown baseline {baseline!r}")
    body = load_dataset_body_model(manifest)
    if model.theta_dim != 3 * body.num_joints:
        raise ConfigError(
            f"checkpoint predicts {model.theta_dim} pose entries but the dataset "
            f"body has {body.num_joints} joints")
    enc = model.config.encoder
    if (enc.rows, enc.cols) != (manifest.mat.rows, manifest.mat.cols):
        raise ConfigError(
            f"checkpoint encoder expects {(enc.rows, enc.cols)} mats, dataset has "
            f"{(manifest.mat.rows, manifest.mat.cols)}")
    if model.config.mode == FRAPPE and not (bypass_gt or baseline):
        needs = "raster" if model.image_encoder is not None else "features"
        if manifest.image_kind != needs:
            raise ConfigError(
                f"checkpoint needs image_kind {needs!r}, dataset has "
                f"{manifest.image_kind!r}")
    dtype = model.config.torch_dtype
    clip_len = clip_len or model.config.lsam.max_len
    records = _load_split(manifest, split) if manifest.split is not None else [
        load_sequence(manifest, rec) for rec in manifest.records]

    feet = foot_joint_ids(body)
    patch = ContactPatchParams(
        contact_threshold=manifest.contact_params.get("contact_threshold", 0.01),
        splat_radius=manifest.contact_params.get("splat_radius", 1),
        weighting=manifest.contact_params.get("weighting", "penetration"))

    per_record: list[tuple[int, dict]] = []
    for record in records:
        t_total = record.num_frames
        if t_total < clip_len and not (bypass_gt or baseline):
            warnings.warn(f"skipping {record.participant_id}/{record.motion_type}: "
                          f"{t_total} frames < clip_len {clip_len}")
            continue
        if bypass_gt:
            theta_p, trans_p = record.thetas.copy(), record.trans.copy()
        elif baseline == "mean-pose":
            mean = model.regressor.mean_init.detach().numpy().astype(np.float64)
            theta_p = np.tile(mean[:-3], (t_total, 1))
            trans_p = np.tile(mean[-3:], (t_total, 1))
        else:
            theta_p, trans_p = _stitch_predictions(model, record, clip_len, dtype)

        from .body_model import forward_sequence

        joints_p, verts_p = forward_sequence(body, record.beta, theta_p, trans_p)
        joints_g, verts_g = forward_sequence(body, record.beta, record.thetas,
                                             record.trans)
        labels = record.contact.labels
        root = body.root_index

        regions = [metrics_mod.support_region(PressureFrame(grid=g.astype(np.float64)),
                                              record.mat, support_threshold)
                   for g in record.pressure]
        com = metrics_mod.com_projection(verts_p)
        cop_pts, cop_regions = [], []
        for i in range(t_total):
            frame = synthesize_pressure(
                SkeletonFrame(joints=joints_p[i], vertices=verts_p[i]),
                record.mass_kg, 0.0, record.mat, patch)
            cop = center_of_pressure(frame, record.mat)
            if cop is not None:
                cop_pts.append(cop)
                cop_regions.append(regions[i])

        values = {
            "MPJPE": metrics_mod.mpjpe(joints_p, joints_g, root),
            "PMPJPE": metrics_mod.pmpjpe(joints_p, joints_g),
            "PVE": metrics_mod.pve(verts_p, verts_g, joints_p[:, root], joints_g[:, root]),
            "GMPJPE": metrics_mod.gmpjpe(joints_p, joints_g),
            "GTraj": metrics_mod.gtraj(joints_p, joints_g, root),
            "WMPJPE": metrics_mod.wmpjpe(joints_p, joints_g, root),
            "WAMPJPE": metrics_mod.wampjpe(joints_p, joints_g, root),
            "RTE": metrics_mod.rte(joints_p[:, root], joints_g[:, root]),
            "WBCE": metrics_mod.wbce(joints_p, labels),
            "FS": metrics_mod.foot_sliding(joints_p, labels, feet),
            "Accel": metrics_mod.accel(joints_p, record.fps, joints_g),
            "Jitter": metrics_mod.jitter(joints_p, record.fps),
            "Frechet": metrics_mod.frechet_distance(joints_p[:, root], joints_g[:, root]),
            "E_com": metrics_mod.e_com(com, regions),
            "E_cop": metrics_mod.e_cop(np.array(cop_pts).reshape(-1, 2), cop_regions),
        }
        per_record.append((t_total, values))

    if not per_record:
        raise ValidationError(f"no evaluable records in split {split!r}")

    report = MetricsReport()
    total_frames = sum(n for n, _ in per_record)
    for name in per_record[0][1]:
        weighted = sum(n * vals[name] for n, vals in per_record) / total_frames
        report.set(name, weighted)
    return report
