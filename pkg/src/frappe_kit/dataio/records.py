"""Dataset manifest, sequence records, clip windowing, and participant splits.

Directory layout::

    <root>/manifest.json
    <root>/body_model.mpro                     (bundle)
    <root>/<participant>/<sequence>/states.mpro    (bundle: beta, theta, trans)
                                   /pressure.mpro  (T, rows, cols) float32
                                   /contact.mpro   (T, K) uint8
                                   /features.mpro  (optional image channel)

The manifest is UTF-8 JSON with a format_version field; all paths are
relative to the manifest. The participant split uses an explicit SplitMix64
generator driving Fisher-Yates, so the same seed shuffles identically on
every platform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..alignment import RigidTransform
from ..body_model import BodyModelDef, BodyState
from ..contact import ContactLabels
from ..errors import FormatError, ShapeError, ValidationError
from ..pressure_sim import MatGeometry
from . import container

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
BODY_MODEL_NAME = "body_model.mpro"
CLIP_LENGTH = 20


@dataclass(frozen=True)
class RecordInfo:
    """Manifest entry for one sequence."""

    participant_id: str
    motion_type: str
    fps: float
    frames: int
    path: str
    mass_kg: float
    beta: np.ndarray
    clipped_frames: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=np.float64).reshape(-1))
        if self.fps <= 0:
            raise ValidationError(f"fps must be > 0, got {self.fps}")
        if self.frames <= 0:
            raise ValidationError(f"frames must be > 0, got {self.frames}")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    records: tuple[RecordInfo, ...]
    mat: MatGeometry
    camera: RigidTransform
    thresholds: dict
    contact_params: dict
    image_kind: str = "none"  # "raster" | "features" | "none"
    image_shape: tuple[int, ...] = ()
    seed: int = 0
    format_version: int = MANIFEST_VERSION
    split: dict | None = None

    @property
    def participants(self) -> list[str]:
        seen: list[str] = []
        for rec in self.records:
            if rec.participant_id not in seen:
                seen.append(rec.participant_id)
        return seen

    def records_for_split(self, which: str) -> list[RecordInfo]:
        if self.split is None:
            raise ValidationError("manifest has no participant split")
        return [r for r in self.records if self.split.get(r.participant_id) == which]

    @property
    def body_model_path(self) -> Path:
        return self.root / BODY_MODEL_NAME


@dataclass(frozen=True)
class SequenceRecord:
    """One fully loaded sequence with per-frame arrays sharing length T."""

    participant_id: str
    motion_type: str
    fps: float
    beta: np.ndarray            # (10,)
    thetas: np.ndarray          # (T, 3K)
    trans: np.ndarray           # (T, 3)
    pressure: np.ndarray        # (T, rows, cols)
    contact: ContactLabels      # (T, K)
    camera: RigidTransform
    mat: MatGeometry
    mass_kg: float = 70.0
    images: np.ndarray | None = None          # (T, H, W)
    image_features: np.ndarray | None = None  # (T, F)

    def __post_init__(self):
        t = self.thetas.shape[0]
        checks = {"trans": self.trans.shape[0], "pressure": self.pressure.shape[0],
                  "contact": self.contact.num_frames}
        if self.images is not None:
            checks["images"] = self.images.shape[0]
        if self.image_features is not None:
            checks["image_features"] = self.image_features.shape[0]
        bad = {k: v for k, v in checks.items() if v != t}
        if bad:
            raise ValidationError(f"per-frame arrays disagree in T={t}: {bad}")
        if self.thetas.shape[1] != 3 * self.contact.num_joints:
            raise ValidationError(
                f"pose has {self.thetas.shape[1] // 3} joints but contact labels have "
                f"{self.contact.num_joints}")
        if self.fps <= 0:
            raise ValidationError(f"fps must be > 0, got {self.fps}")

    @property
    def num_frames(self) -> int:
        return self.thetas.shape[0]

    def state(self, t: int) -> BodyState:
        return BodyState(beta=self.beta, theta=self.thetas[t], trans=self.trans[t])


@dataclass(frozen=True)
class ClipBatch:
    """A window of consecutive frames from one sequence."""

    pressure: np.ndarray        # (L, rows, cols)
    thetas: np.ndarray          # (L, 3K)
    trans: np.ndarray           # (L, 3)
    beta: np.ndarray            # (10,)
    contact: np.ndarray         # (L, K) uint8
    camera: RigidTransform
    mat: MatGeometry
    participant_id: str
    start: int
    length: int = CLIP_LENGTH
    images: np.ndarray | None = None
    image_features: np.ndarray | None = None

    def __post_init__(self):
        for name in ("pressure", "thetas", "trans", "contact"):
            if getattr(self, name).shape[0] != self.length:
                raise ShapeError(f"{name} window length {getattr(self, name).shape[0]} "
                                 f"!= {self.length}")


def window_sequence(record: SequenceRecord, length: int = CLIP_LENGTH,
                    stride: int = 10) -> list[ClipBatch]:
    """Windows starting at 0, stride, 2*stride, ...; empty when T < length."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if length < 1:
        raise ValidationError(f"length must be >= 1, got {length}")
    t = record.num_frames
    if t < length:
        return []
    starts = range(0, t - length + 1, stride)
    out = []
    for s in starts:
        sl = slice(s, s + length)
        out.append(ClipBatch(
            pressure=record.pressure[sl], thetas=record.thetas[sl],
            trans=record.trans[sl], beta=record.beta,
            contact=record.contact.labels[sl], camera=record.camera,
            mat=record.mat, participant_id=record.participant_id,
            start=s, length=length,
            images=None if record.images is None else record.images[sl],
            image_features=(None if record.image_features is None
                            else record.image_features[sl]),
        ))
    return out


# SplitMix64 update constants (Steele et al. mixing function). Documented so
# the shuffle can be reproduced in any language.
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    z = z ^ (z >> 31)
    return state, z


def _fisher_yates(items: list, seed: int) -> list:
    items = list(items)
    state = seed & _MASK
    for i in range(len(items) - 1, 0, -1):
        state, z = _splitmix64(state)
        j = z % (i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def split_by_participant(manifest: DatasetManifest, ratio: tuple[int, int] = (5, 1),
                         seed: int = 0) -> DatasetManifest:
    """Assign whole participants to train/test at the given ratio.

    Participants are shuffled by a seeded SplitMix64 Fisher-Yates; the first
    round(P * ratio_train) go to train, the rest to test, with at least one
    participant on each side. No participant appears in both.
    """
    participants = sorted(set(r.participant_id for r in manifest.records))
    if len(participants) < 2:
        raise ValidationError(f"need at least 2 participants to split, got {len(participants)}")
    if ratio[0] <= 0 or ratio[1] <= 0:
        raise ValidationError(f"ratio parts must be positive, got {ratio}")
    shuffled = _fisher_yates(participants, seed)
    frac = ratio[0] / (ratio[0] + ratio[1])
    n_train = int(np.floor(len(participants) * frac + 0.5))
    n_train = min(max(n_train, 1), len(participants) - 1)
    split = {pid: ("train" if i < n_train else "test") for i, pid in enumerate(shuffled)}
    return replace(manifest, split=split)


def _rigid_to_json(x: RigidTransform) -> dict:
    return {"rotation": [float(v) for v in x.rotation.reshape(-1)],
            "translation": [float(v) for v in x.translation]}


def _rigid_from_json(d: dict) -> RigidTransform:
    return RigidTransform(rotation=np.array(d["rotation"]).reshape(3, 3),
                          translation=np.array(d["translation"]))


def _mat_to_json(mat: MatGeometry) -> dict:
    return {"origin_xy": [float(v) for v in mat.origin_xy], "cell_pitch": mat.cell_pitch,
            "rows": mat.rows, "cols": mat.cols,
            "rotation": [float(v) for v in mat.rotation.reshape(-1)],
            "translation": [float(v) for v in mat.translation]}


def _mat_from_json(d: dict) -> MatGeometry:
    return MatGeometry(origin_xy=np.array(d["origin_xy"]), cell_pitch=d["cell_pitch"],
                       rows=d["rows"], cols=d["cols"],
                       rotation=np.array(d["rotation"]).reshape(3, 3),
                       translation=np.array(d["translation"]))


def save_manifest(manifest: DatasetManifest) -> Path:
    doc = {
        "format_version": manifest.format_version,
        "seed": manifest.seed,
        "thresholds": manifest.thresholds,
        "contact_params": manifest.contact_params,
        "mat": _mat_to_json(manifest.mat),
        "camera": _rigid_to_json(manifest.camera),
        "image_kind": manifest.image_kind,
        "image_shape": list(manifest.image_shape),
        "body_model": BODY_MODEL_NAME,
        "records": [{
            "participant_id": r.participant_id, "motion_type": r.motion_type,
            "fps": r.fps, "frames": r.frames, "path": r.path, "mass_kg": r.mass_kg,
            "beta": [float(v) for v in r.beta], "clipped_frames": r.clipped_frames,
        } for r in manifest.records],
        "split": manifest.split,
    }
    path = manifest.root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_manifest(root) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Every referenced container must exist with a parseable header, per-frame
    dims must agree across files, and the split (when present) must cover all
    participants.
    """
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"no {MANIFEST_NAME} under {root}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {doc.get('format_version')}")

    records = tuple(RecordInfo(
        participant_id=r["participant_id"], motion_type=r["motion_type"], fps=r["fps"],
        frames=r["frames"], path=r["path"], mass_kg=r["mass_kg"],
        beta=np.array(r["beta"]), clipped_frames=r.get("clipped_frames", 0),
    ) for r in doc["records"])

    manifest = DatasetManifest(
        root=root, records=records, mat=_mat_from_json(doc["mat"]),
        camera=_rigid_from_json(doc["camera"]), thresholds=doc["thresholds"],
        contact_params=doc["contact_params"], image_kind=doc.get("image_kind", "none"),
        image_shape=tuple(doc.get("image_shape", ())), seed=doc.get("seed", 0),
        split=doc.get("split"),
    )

    if not manifest.body_model_path.exists():
        raise FormatError(f"missing body model file {manifest.body_model_path}")
    model = container.load_body_model(manifest.body_model_path)
    k = model.num_joints

    for rec in records:
        seq_dir = root / rec.path
        _, states_dims = _bundle_member_dims(seq_dir / "states.mpro", "theta")
        if states_dims != (rec.frames, 3 * k):
            raise ValidationError(
                f"{rec.path}: theta dims {states_dims} disagree with frames={rec.frames}, K={k}")
        _, pdims = container.read_header(seq_dir / "pressure.mpro")
        if pdims[0] != rec.frames or pdims[1:] != (manifest.mat.rows, manifest.mat.cols):
            raise ValidationError(f"{rec.path}: pressure dims {pdims} disagree with manifest")
        _, cdims = container.read_header(seq_dir / "contact.mpro")
        if cdims != (rec.frames, k):
            raise ValidationError(f"{rec.path}: contact dims {cdims} disagree with T/K")
        if manifest.image_kind != "none":
            _, fdims = container.read_header(seq_dir / "features.mpro")
            if fdims[0] != rec.frames or tuple(fdims[1:]) != manifest.image_shape:
                raise ValidationError(f"{rec.path}: features dims {fdims} disagree with manifest")

    if manifest.split is not None:
        missing = [p for p in manifest.participants if p not in manifest.split]
        if missing:
            raise ValidationError(f"split does not cover participants {missing}")
    return manifest


def _bundle_member_dims(path, key: str) -> tuple[np.dtype, tuple[int, ...]]:
    arrays = container.read_bundle(path)
    if key not in arrays:
        raise FormatError(f"{path}: missing bundle key {key!r}")
    return arrays[key].dtype, arrays[key].shape


def save_sequence(root: Path, rec_path: str, beta, thetas, trans, pressure, contact,
                  images=None, image_features=None) -> None:
    seq_dir = Path(root) / rec_path
    seq_dir.mkdir(parents=True, exist_ok=True)
    container.write_bundle(seq_dir / "states.mpro", {
        "beta": np.asarray(beta, dtype=np.float64),
        "theta": np.asarray(thetas, dtype=np.float64),
        "trans": np.asarray(trans, dtype=np.float64),
    })
    container.write_array(seq_dir / "pressure.mpro", np.asarray(pressure, dtype=np.float32))
    container.write_array(seq_dir / "contact.mpro", np.asarray(contact, dtype=np.uint8))
    if images is not None:
        container.write_array(seq_dir / "features.mpro", np.asarray(images, dtype=np.float32))
    elif image_features is not None:
        container.write_array(seq_dir / "features.mpro",
                              np.asarray(image_features, dtype=np.float32))


def load_sequence(manifest: DatasetManifest, rec: RecordInfo) -> SequenceRecord:
    seq_dir = manifest.root / rec.path
    states = container.read_bundle(seq_dir / "states.mpro")
    pressure = container.read_array(seq_dir / "pressure.mpro")
    contact = container.read_array(seq_dir / "contact.mpro")
    images = features = None
    if manifest.image_kind == "raster":
        images = container.read_array(seq_dir / "features.mpro")
    elif manifest.image_kind == "features":
        features = container.read_array(seq_dir / "features.mpro")
    labels = ContactLabels(labels=contact, tau1=manifest.thresholds["tau1"],
                           tau2=manifest.thresholds["tau2"],
                           radius=manifest.thresholds["radius"])
    return SequenceRecord(
        participant_id=rec.participant_id, motion_type=rec.motion_type, fps=rec.fps,
        beta=states["beta"], thetas=states["theta"], trans=states["trans"],
        pressure=pressure, contact=labels, camera=manifest.camera, mat=manifest.mat,
        mass_kg=rec.mass_kg, images=images, image_features=features,
    )


def load_dataset_body_model(manifest: DatasetManifest) -> BodyModelDef:
    return container.load_body_model(manifest.body_model_path)
