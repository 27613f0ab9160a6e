"""Ground-pressure synthesis from body geometry, plus pressure summaries.

The mat is a regular grid lying in the world x-y plane (up axis +z). Vertices
below a contact threshold deposit force into nearby cells; the grid is then
rescaled so the total equals mass * (g + vertical acceleration). Real-mat
ingestion uses the same frame type with raw counts treated as proportional
force; nothing downstream assumes newtons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body_model import SkeletonFrame
from .errors import InternalError, ShapeError, ValidationError

GRAVITY = 9.81  # m/s^2

DEFAULT_ROWS = 120
DEFAULT_COLS = 160
DEFAULT_CELL_PITCH = 0.01  # meters per cell; the physical pitch is unpublished


def _identity_rotation() -> np.ndarray:
    return np.eye(3)


@dataclass(frozen=True)
class MatGeometry:
    """Pressure mat placement.

    Cell (r, c) center in world coordinates is
    ``R @ [c * cell_pitch, r * cell_pitch, 0] + t + [origin_xy, 0]``
    where (R, t) is the mat-to-world rigid transform (identity by default, as
    produced by rigid registration of mat markers). Rows run along mat y,
    columns along mat x.
    """

    origin_xy: np.ndarray = field(default_factory=lambda: np.zeros(2))
    cell_pitch: float = DEFAULT_CELL_PITCH
    rows: int = DEFAULT_ROWS
    cols: int = DEFAULT_COLS
    rotation: np.ndarray = field(default_factory=_identity_rotation)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "origin_xy", np.asarray(self.origin_xy, dtype=np.float64).reshape(2))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.cell_pitch <= 0:
            raise ValidationError(f"cell_pitch must be > 0, got {self.cell_pitch}")
        if self.rows <= 0 or self.cols <= 0:
            raise ValidationError(f"rows and cols must be > 0, got {self.rows}x{self.cols}")

    @classmethod
    def centered(cls, rows: int = DEFAULT_ROWS, cols: int = DEFAULT_COLS,
                 cell_pitch: float = DEFAULT_CELL_PITCH) -> "MatGeometry":
        """Mat centered on the world origin with identity orientation."""
        origin = (-(cols - 1) * cell_pitch / 2.0, -(rows - 1) * cell_pitch / 2.0)
        return cls(origin_xy=np.array(origin), cell_pitch=cell_pitch, rows=rows, cols=cols)

    def cell_center_world(self, row, col) -> np.ndarray:
        """World x-y of cell centers; row/col may be scalars or arrays."""
        row = np.asarray(row, dtype=np.float64)
        col = np.asarray(col, dtype=np.float64)
        local = np.stack([col * self.cell_pitch, row * self.cell_pitch,
                          np.zeros_like(row, dtype=np.float64)], axis=-1)
        world = local @ self.rotation.T + self.translation
        return world[..., :2] + self.origin_xy

    def cell_centers_world(self) -> np.ndarray:
        """(rows, cols, 2) world x-y coordinates of every cell center."""
        rr, cc = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        return self.cell_center_world(rr, cc)

    def world_to_cell(self, xy) -> np.ndarray:
        """Continuous (row, col) mat coordinates of world x-y points (..., 2)."""
        xy = np.asarray(xy, dtype=np.float64)
        p = np.zeros(xy.shape[:-1] + (3,))
        p[..., :2] = xy - self.origin_xy
        local = (p - self.translation) @ self.rotation
        out = np.empty(xy.shape[:-1] + (2,))
        out[..., 0] = local[..., 1] / self.cell_pitch
        out[..., 1] = local[..., 0] / self.cell_pitch
        return out


@dataclass(frozen=True)
class PressureFrame:
    """One mat reading: (rows, cols) non-negative force per cell."""

    grid: np.ndarray
    timestamp: float = 0.0
    clipped: bool = False  # some contact fell off the mat during synthesis

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2:
            raise ShapeError(f"grid must be 2-D, got shape {grid.shape}")
        if not np.isfinite(grid).all():
            raise ValidationError("grid contains non-finite values")
        if (grid < 0).any():
            raise ValidationError("grid contains negative values")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class ContactPatchParams:
    """Contact detection and splatting parameters for synthesis.

    A vertex touches when z < contact_threshold; it deposits into cells
    within splat_radius (cell units) of its projection, weighted either
    uniformly or by penetration depth. noise_sigma > 0 adds clamped
    Gaussian noise after normalization (off by default).
    """

    contact_threshold: float = 0.01
    splat_radius: int = 1
    weighting: str = "penetration"  # or "uniform"
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.contact_threshold <= 0:
            raise ValidationError(f"contact_threshold must be > 0, got {self.contact_threshold}")
        if self.splat_radius < 0:
            raise ValidationError(f"splat_radius must be >= 0, got {self.splat_radius}")
        if self.weighting not in ("uniform", "penetration"):
            raise ValidationError(f"weighting must be 'uniform' or 'penetration', got {self.weighting!r}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _disk_offsets(radius: int) -> np.ndarray:
    """Integer (dr, dc) offsets within a Euclidean radius; (0, 0) alone for radius 0."""
    if radius == 0:
        return np.zeros((1, 2), dtype=np.int64)
    r = int(np.ceil(radius))
    dr, dc = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    mask = dr * dr + dc * dc <= radius * radius
    return np.stack([dr[mask], dc[mask]], axis=1)


def synthesize_pressure(frame: SkeletonFrame, mass_kg: float, vertical_accel: float,
                        mat: MatGeometry, params: ContactPatchParams,
                        timestamp: float = 0.0,
                        rng: np.random.Generator | None = None) -> PressureFrame:
    """Render the ground force pattern of a posed body onto the mat.

    The grid totals mass_kg * (GRAVITY + vertical_accel) newtons whenever any
    on-mat vertex is in contact; an airborne body yields an all-zero frame.
    Vertices projecting off the mat contribute nothing (clipped flag set).
    """
    if mass_kg <= 0:
        raise ValidationError(f"mass_kg must be > 0, got {mass_kg}")
    total_target = mass_kg * (GRAVITY + vertical_accel)
    if total_target < 0:
        raise ValidationError(
            f"g + vertical_accel must be >= 0, got accel {vertical_accel}")
    if frame.vertices is None:
        raise ValidationError("synthesize_pressure needs a frame with vertices")

    verts = frame.vertices
    touching = verts[:, 2] < params.contact_threshold
    grid = np.zeros((mat.rows, mat.cols))
    if not touching.any():
        return PressureFrame(grid=grid, timestamp=timestamp)

    contact = verts[touching]
    if params.weighting == "penetration":
        vweights = params.contact_threshold - contact[:, 2]
    else:
        vweights = np.ones(len(contact))

    cells = mat.world_to_cell(contact[:, :2])  # (N, 2) continuous (row, col)
    offsets = _disk_offsets(params.splat_radius)
    clipped = False
    any_deposit = False
    for (rhat, chat), w in zip(cells, vweights):
        if params.splat_radius == 0:
            targets = np.array([[int(np.floor(rhat + 0.5)), int(np.floor(chat + 0.5))]])
        else:
            base = np.array([np.floor(rhat + 0.5), np.floor(chat + 0.5)], dtype=np.int64)
            cand = base + offsets
            d2 = (cand[:, 0] - rhat) ** 2 + (cand[:, 1] - chat) ** 2
            targets = cand[d2 <= params.splat_radius ** 2 + 1e-12]
            if len(targets) == 0:
                targets = base[None, :]
        inb = ((targets[:, 0] >= 0) & (targets[:, 0] < mat.rows)
               & (targets[:, 1] >= 0) & (targets[:, 1] < mat.cols))
        if not inb.all():
            clipped = True
        targets = targets[inb]
        if len(targets) == 0:
            continue
        share = w / len(targets)
        np.add.at(grid, (targets[:, 0], targets[:, 1]), share)
        any_deposit = True

    if not any_deposit:
        # every contacting vertex fell off the mat
        return PressureFrame(grid=grid, timestamp=timestamp, clipped=True)

    raw_total = grid.sum()
    if raw_total <= 0:
        raise InternalError("contact exists but splatted weights sum to zero")
    grid *= total_target / raw_total

    if params.noise_sigma > 0:
        if rng is None:
            raise ValidationError("noise_sigma > 0 requires an rng")
        grid = np.maximum(grid + rng.normal(0.0, params.noise_sigma, grid.shape), 0.0)

    return PressureFrame(grid=grid, timestamp=timestamp, clipped=clipped)


def total_force(frame: PressureFrame) -> float:
    """Sum of all cells, in the frame's force units."""
    return float(frame.grid.sum())


def center_of_pressure(frame: PressureFrame, mat: MatGeometry) -> np.ndarray | None:
    """Force-weighted mean of cell-center world positions, (2,) world x-y.

    Returns None when the total force is below 1e-9 (effectively airborne).
    """
    total = frame.grid.sum()
    if total < 1e-9:
        return None
    centers = mat.cell_centers_world()
    w = frame.grid / total
    return np.array([(w * centers[..., 0]).sum(), (w * centers[..., 1]).sum()])
