"""Neural estimators: small-kernel pressure encoder, long/short-term attention
module, fusion cross-attention, image feature providers, and the iterative
pose/translation regressor.

All modules are deterministic functions of (parameters, inputs); dropout is
config-exposed and defaults to zero. Every sublayer is residual, so zeroing a
sublayer's parameters turns it into the identity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .dataio import container
from .errors import ConfigError, ShapeError, ValidationError

_DTYPES = {"float32": torch.float32, "float64": torch.float64}

PRESSURE_ONLY = "pressure_only"
FRAPPE = "frappe"

CHECKPOINT_HEADER = "header.json"
CHECKPOINT_PARAMS = "params"


@dataclass(frozen=True)
class PressureEncoderConfig:
    """Per-frame convolutional encoder over mat grids.

    The stem kernel is deliberately small (3x3 stride 1 by default) so sparse
    footprints survive the first layer; later stages downsample with a
    standard residual schedule.
    """

    rows: int
    cols: int
    channels: tuple[int, ...] = (8, 16, 32, 64)
    first_kernel: int = 3
    strides: tuple[int, ...] = (1, 2, 2, 2)
    feature_dim: int = 256

    def __post_init__(self):
        if self.first_kernel % 2 != 1:
            raise ConfigError(f"first_kernel must be odd, got {self.first_kernel}")
        if self.feature_dim <= 0:
            raise ConfigError(f"feature_dim must be > 0, got {self.feature_dim}")
        if len(self.strides) != len(self.channels):
            raise ConfigError("strides and channels must have equal length")
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "strides", tuple(self.strides))


@dataclass(frozen=True)
class LSAMConfig:
    """Two bidirectional recurrent layers plus one self-attention layer, each
    residual: recurrence for short-range context, attention for long-range."""

    feature_dim: int
    heads: int = 4
    max_len: int = 20
    positional: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.feature_dim % 2 != 0:
            raise ConfigError(f"feature_dim must be even, got {self.feature_dim}")
        if self.feature_dim % self.heads != 0:
            raise ConfigError(
                f"feature_dim {self.feature_dim} must divide by heads {self.heads}")


@dataclass(frozen=True)
class FCAMConfig:
    """Cross-attention with the pressure stream as Query and the image stream
    as Key/Value, residual on the query stream."""

    query_dim: int
    kv_dim: int
    heads: int = 4
    max_len: int = 20
    positional: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.query_dim % self.heads != 0:
            raise ConfigError(
                f"query_dim {self.query_dim} must divide by heads {self.heads}")


@dataclass(frozen=True)
class ImageEncoderConfig:
    """Small trainable strided-conv encoder for synthetic rasters."""

    size: int
    channels: tuple[int, ...] = (8, 16, 32, 64)
    feature_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.feature_dim <= 0:
            raise ConfigError(f"feature_dim must be > 0, got {self.feature_dim}")


@dataclass(frozen=True)
class RegressorConfig:
    """Iterative refinement head: params_{i+1} = params_i + MLP(feat || params_i),
    starting from a mean parameter vector."""

    feature_dim: int
    param_dim: int            # 3K pose entries + 3 translation entries
    iterations: int = 3
    hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.param_dim < 4:
            raise ConfigError(f"param_dim must cover pose + translation, got {self.param_dim}")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class FrappeConfig:
    mode: str
    encoder: PressureEncoderConfig
    lsam: LSAMConfig
    regressor: RegressorConfig
    fcam: FCAMConfig | None = None
    image_encoder: ImageEncoderConfig | None = None
    feature_input_dim: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in (PRESSURE_ONLY, FRAPPE):
            raise ConfigError(f"mode must be '{PRESSURE_ONLY}' or '{FRAPPE}', got {self.mode!r}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        if self.mode == FRAPPE:
            if self.fcam is None:
                raise ConfigError("frappe mode requires an fcam config")
            if self.image_encoder is None and self.feature_input_dim is None:
                raise ConfigError("frappe mode needs an image encoder or feature_input_dim")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


def _as_frames(x: torch.Tensor, rows: int, cols: int) -> tuple[torch.Tensor, tuple, bool]:
    """(T, r, c) or (B, T, r, c) -> (B*T, 1, r, c) plus reshape info."""
    if x.ndim == 3:
        batched = False
        x = x.unsqueeze(0)
    elif x.ndim == 4:
        batched = True
    else:
        raise ShapeError(f"expected (T, rows, cols) or (B, T, rows, cols), got {tuple(x.shape)}")
    if x.shape[-2:] != (rows, cols):
        raise ShapeError(f"grid is {tuple(x.shape[-2:])}, encoder expects {(rows, cols)}")
    b, t = x.shape[:2]
    return x.reshape(b * t, 1, rows, cols), (b, t), batched


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.act = nn.ReLU()

    def forward(self, x):
        h = self.conv2(self.act(self.conv1(x)))
        return self.act(x + h)


def _conv_out(size: int, stride: int) -> int:
    # 3x3 (or any odd k with same padding) conv: out = floor((in - 1)/s) + 1
    return (size - 1) // stride + 1


class PressureEncoder(nn.Module):
    """Per-frame mat features: log1p compression, small-kernel stem, residual
    downsampling stages, then a linear head over the FLATTENED feature map.

    Flattening (rather than global pooling) keeps the footprint's position on
    the mat observable, which carries the global trajectory signal.
    """

    def __init__(self, config: PressureEncoderConfig):
        super().__init__()
        self.config = config
        pad = config.first_kernel // 2
        self.stem = nn.Conv2d(1, config.channels[0], config.first_kernel,
                              config.strides[0], pad)
        stages = []
        h, w = _conv_out(config.rows, config.strides[0]), _conv_out(config.cols, config.strides[0])
        for i in range(1, len(config.channels)):
            stages.append(nn.Conv2d(config.channels[i - 1], config.channels[i], 3,
                                    config.strides[i], 1))
            stages.append(nn.ReLU())
            stages.append(_ResidualBlock(config.channels[i]))
            h, w = _conv_out(h, config.strides[i]), _conv_out(w, config.strides[i])
        self.stages = nn.Sequential(*stages)
        self.act = nn.ReLU()
        self.head = nn.Linear(config.channels[-1] * h * w, config.feature_dim)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(clip).all():
            raise ValidationError("pressure clip contains non-finite values")
        x, (b, t), batched = _as_frames(clip, self.config.rows, self.config.cols)
        x = torch.log1p(x.clamp(min=0))
        x = self.act(self.stem(x))
        x = self.stages(x)
        x = self.head(x.reshape(x.shape[0], -1))
        x = x.reshape(b, t, -1)
        return x if batched else x.squeeze(0)


class ImageEncoder(nn.Module):
    """Strided conv encoder for (.., T, H, W) rasters -> (.., T, D) features.

    Same flattened head as the pressure encoder so the figure's image position
    stays observable.
    """

    def __init__(self, config: ImageEncoderConfig):
        super().__init__()
        self.config = config
        layers = []
        prev = 1
        side = config.size
        for ch in config.channels:
            layers.append(nn.Conv2d(prev, ch, 3, 2, 1))
            layers.append(nn.ReLU())
            prev = ch
            side = _conv_out(side, 2)
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(prev * side * side, config.feature_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x, (b, t), batched = _as_frames(images, self.config.size, self.config.size)
        x = self.body(x)
        x = self.head(x.reshape(x.shape[0], -1)).reshape(b, t, -1)
        return x if batched else x.squeeze(0)


def _ensure_batched(x: torch.Tensor, name: str) -> tuple[torch.Tensor, bool]:
    if x.ndim == 2:
        return x.unsqueeze(0), False
    if x.ndim == 3:
        return x, True
    raise ShapeError(f"{name} must be (T, D) or (B, T, D), got {tuple(x.shape)}")


class LSAM(nn.Module):
    def __init__(self, config: LSAMConfig):
        super().__init__()
        self.config = config
        d = config.feature_dim
        self.gru1 = nn.GRU(d, d // 2, batch_first=True, bidirectional=True)
        self.gru2 = nn.GRU(d, d // 2, batch_first=True, bidirectional=True)
        self.attn = nn.MultiheadAttention(d, config.heads, dropout=config.dropout,
                                          batch_first=True)
        if config.positional:
            self.pos = nn.Parameter(torch.randn(config.max_len, d) * 0.02)
        else:
            self.pos = None

    def forward(self, features: torch.Tensor, return_attn: bool = False):
        x, batched = _ensure_batched(features, "features")
        t = x.shape[1]
        h1, _ = self.gru1(x)
        x = x + h1
        h2, _ = self.gru2(x)
        x = x + h2
        a_in = x
        if self.pos is not None:
            if t > self.config.max_len:
                raise ShapeError(f"sequence length {t} exceeds positional table "
                                 f"{self.config.max_len}")
            a_in = x + self.pos[:t]
        attn_out, weights = self.attn(a_in, a_in, a_in, need_weights=True)
        x = x + attn_out
        if not batched:
            x = x.squeeze(0)
            weights = weights.squeeze(0)
        return (x, weights) if return_attn else x


class FCAM(nn.Module):
    def __init__(self, config: FCAMConfig):
        super().__init__()
        self.config = config
        self.attn = nn.MultiheadAttention(
            config.query_dim, config.heads, dropout=config.dropout,
            kdim=config.kv_dim, vdim=config.kv_dim, batch_first=True)
        if config.positional:
            self.pos_q = nn.Parameter(torch.randn(config.max_len, config.query_dim) * 0.02)
            self.pos_kv = nn.Parameter(torch.randn(config.max_len, config.kv_dim) * 0.02)
        else:
            self.pos_q = None
            self.pos_kv = None

    def forward(self, pressure_feats: torch.Tensor, image_feats: torch.Tensor,
                return_weights: bool = False):
        q, batched = _ensure_batched(pressure_feats, "pressure_feats")
        kv, _ = _ensure_batched(image_feats, "image_feats")
        if q.shape[:2] != kv.shape[:2]:
            raise ShapeError(f"query frames {tuple(q.shape[:2])} != key/value frames "
                             f"{tuple(kv.shape[:2])}")
        t = q.shape[1]
        q_in, kv_in = q, kv
        if self.pos_q is not None:
            if t > self.config.max_len:
                raise ShapeError(f"sequence length {t} exceeds positional table "
                                 f"{self.config.max_len}")
            q_in = q + self.pos_q[:t]
            kv_in = kv + self.pos_kv[:t]
        attn_out, weights = self.attn(q_in, kv_in, kv_in, need_weights=True)
        out = q + attn_out
        if not batched:
            out = out.squeeze(0)
            weights = weights.squeeze(0)
        return (out, weights) if return_weights else out


class IterativeRegressor(nn.Module):
    """Refines (pose, translation) from a mean initialization; the full
    iteration stack stays in the autograd graph."""

    def __init__(self, config: RegressorConfig):
        super().__init__()
        self.config = config
        dims = (config.feature_dim + config.param_dim,) + config.hidden
        layers = []
        for i in range(len(config.hidden)):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            layers.append(nn.ReLU())
        self.body = nn.Sequential(*layers)
        self.delta = nn.Linear(dims[-1], config.param_dim)
        nn.init.xavier_uniform_(self.delta.weight, gain=0.01)
        nn.init.zeros_(self.delta.bias)
        self.register_buffer("mean_init", torch.zeros(config.param_dim))

    def set_mean(self, mean: np.ndarray | torch.Tensor):
        mean = torch.as_tensor(mean, dtype=self.mean_init.dtype)
        if mean.shape != self.mean_init.shape:
            raise ShapeError(f"mean must have shape {tuple(self.mean_init.shape)}, "
                             f"got {tuple(mean.shape)}")
        with torch.no_grad():
            self.mean_init.copy_(mean)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        x, batched = _ensure_batched(features, "features")
        b, t, d = x.shape
        flat = x.reshape(b * t, d)
        params = self.mean_init.unsqueeze(0).expand(b * t, -1)
        for _ in range(self.config.iterations):
            h = self.body(torch.cat([flat, params], dim=-1))
            params = params + self.delta(h)
        params = params.reshape(b, t, -1)
        return params if batched else params.squeeze(0)


class FrappeModel(nn.Module):
    """Composed estimator. pressure_only: encoder -> LSAM -> regressor.
    frappe: encoder -> FCAM(pressure as Query, image as Key/Value) -> LSAM ->
    regressor. The regressor consumes the fused features only."""

    def __init__(self, config: FrappeConfig):
        super().__init__()
        self.config = config
        self.encoder = PressureEncoder(config.encoder)
        self.lsam = LSAM(config.lsam)
        self.regressor = IterativeRegressor(config.regressor)
        self.fcam = None
        self.image_encoder = None
        self.feature_proj = None
        if config.mode == FRAPPE:
            self.fcam = FCAM(config.fcam)
            if config.image_encoder is not None:
                self.image_encoder = ImageEncoder(config.image_encoder)
            else:
                self.feature_proj = nn.Linear(config.feature_input_dim,
                                              config.fcam.kv_dim)
        self.to(config.torch_dtype)

    @property
    def theta_dim(self) -> int:
        return self.config.regressor.param_dim - 3

    def image_features(self, images=None, image_features=None) -> torch.Tensor:
        if self.image_encoder is not None:
            if images is None:
                raise ValidationError("frappe model with an image encoder needs rasters")
            return self.image_encoder(images)
        if image_features is None:
            raise ValidationError("frappe model without an image encoder needs "
                                  "precomputed feature vectors")
        return self.feature_proj(image_features)

    def forward(self, pressure: torch.Tensor, images: torch.Tensor | None = None,
                image_features: torch.Tensor | None = None
                ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (theta (.., T, 3K), trans (.., T, 3))."""
        feats = self.encoder(pressure)
        if self.config.mode == FRAPPE:
            kv = self.image_features(images, image_features)
            feats = self.fcam(feats, kv)
        feats = self.lsam(feats)
        params = self.regressor(feats)
        return params[..., :-3], params[..., -3:]

    def predict_mean(self, pressure: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Constant mean-parameter baseline with the same output shapes."""
        lead = pressure.shape[:-2] if pressure.ndim == 3 else pressure.shape[:2]
        params = self.regressor.mean_init.reshape((1,) * len(lead) + (-1,))
        params = params.expand(lead + (self.config.regressor.param_dim,))
        return params[..., :-3], params[..., -3:]


# ---------------------------------------------------------------------------
# Config and checkpoint serialization


def config_to_dict(config: FrappeConfig) -> dict:
    return asdict(config)


def config_from_dict(doc: dict) -> FrappeConfig:
    def sub(cls, key):
        if doc.get(key) is None:
            return None
        d = dict(doc[key])
        for name in ("channels", "strides", "hidden"):
            if name in d and d[name] is not None:
                d[name] = tuple(d[name])
        return cls(**d)

    return FrappeConfig(
        mode=doc["mode"],
        encoder=sub(PressureEncoderConfig, "encoder"),
        lsam=sub(LSAMConfig, "lsam"),
        regressor=sub(RegressorConfig, "regressor"),
        fcam=sub(FCAMConfig, "fcam"),
        image_encoder=sub(ImageEncoderConfig, "image_encoder"),
        feature_input_dim=doc.get("feature_input_dim"),
        dtype=doc.get("dtype", "float32"),
    )


def save_checkpoint(directory, model: FrappeModel, step: int = 0, seed: int = 0,
                    extra: dict | None = None) -> Path:
    """Checkpoint layout: header.json (config, step, seed) plus one array
    container per named parameter under params/."""
    directory = Path(directory)
    params_dir = directory / CHECKPOINT_PARAMS
    params_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, tensor in model.state_dict().items():
        fname = name.replace(".", "__") + ".mpro"
        container.write_array(params_dir / fname, tensor.detach().cpu().numpy())
        names.append(name)
    header = {"format_version": 1, "config": config_to_dict(model.config),
              "step": step, "seed": seed, "parameters": names,
              "extra": extra or {}}
    (directory / CHECKPOINT_HEADER).write_text(
        json.dumps(header, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory) -> tuple[FrappeModel, dict]:
    directory = Path(directory)
    header_path = directory / CHECKPOINT_HEADER
    if not header_path.exists():
        raise ConfigError(f"no {CHECKPOINT_HEADER} in {directory}")
    header = json.loads(header_path.read_text(encoding="utf-8"))
    model = FrappeModel(config_from_dict(header["config"]))
    state = {}
    for name in header["parameters"]:
        arr = container.read_array(directory / CHECKPOINT_PARAMS
                                   / (name.replace(".", "__") + ".mpro"))
        state[name] = torch.from_numpy(arr)
    model.load_state_dict(state, strict=True)
    return model, header
