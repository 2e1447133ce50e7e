"""Learnable components: dimension-reducing encoders, EDSR feature encoders,
local implicit image function queries, global/positional encoders and the
coordinate decoders, composed into a two-modality :class:`ModelBundle`.

Coordinates are ``(y, x)`` pairs in ``[-1, 1]`` at pixel centers; a query's
``cell`` is the extent of one target pixel in the same units.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datahub import NormStats, WindField
from .errors import ConfigError, DomainError, ShapeError

MODALITIES = (1, 2)
CHECKPOINT_FORMAT = "windsr-model"
CHECKPOINT_VERSION = 1


class DecoderVariant(str, Enum):
    LIIF = "LIIF"
    PEI = "PEI"
    GEI = "GEI"
    GPEI = "GPEI"

    @property
    def uses_global(self) -> bool:
        return self in (DecoderVariant.GEI, DecoderVariant.GPEI)

    @property
    def uses_positional(self) -> bool:
        return self in (DecoderVariant.PEI, DecoderVariant.GPEI)


@dataclass
class ModelConfig:
    d: int = 8
    in_channels: int = 1
    latent_channels: int = 1
    encoder_width: int = 32
    encoder_blocks: int = 2
    feature_channels: int = 64
    feature_blocks: int = 8
    global_dim: int = 128
    global_widths: tuple[int, ...] = (32, 64, 128)
    global_backbone: str = "strided"
    decoder_hidden: tuple[int, ...] = (256, 256, 256, 256)
    variant: DecoderVariant = DecoderVariant.GEI
    positional_freqs: int = 6
    feat_unfold: bool = False
    cell_decode: bool = True
    local_ensemble: bool = True

    def __post_init__(self):
        self.variant = DecoderVariant(self.variant)
        self.global_widths = tuple(self.global_widths)
        self.decoder_hidden = tuple(self.decoder_hidden)
        if self.d < 1 or self.d & (self.d - 1):
            raise ConfigError(f"reduction factor d must be a power of two, got {self.d}")
        if self.variant.uses_positional and self.positional_freqs < 1:
            raise ConfigError(f"positional frequencies must be >= 1, got {self.positional_freqs}")
        if self.global_backbone not in ("strided", "resnet18"):
            raise ConfigError(f"unknown global backbone {self.global_backbone!r}")
        if not self.decoder_hidden:
            raise ConfigError("decoder needs at least one hidden layer")

    @property
    def local_dim(self) -> int:
        c = self.feature_channels * (9 if self.feat_unfold else 1)
        return c + 2 + (2 if self.cell_decode else 0)

    @property
    def decoder_in_width(self) -> int:
        w = self.local_dim
        if self.variant.uses_global:
            w += self.global_dim
        if self.variant.uses_positional:
            w += 4 * self.positional_freqs
        return w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["global_widths"] = list(self.global_widths)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def tiny(cls, variant="GPEI", **overrides) -> "ModelConfig":
        """Configuration small enough for finite-difference gradient checks."""
        base = dict(d=4, latent_channels=2, encoder_width=4, encoder_blocks=2, feature_channels=8,
                    feature_blocks=1, global_dim=8, global_widths=(4, 8, 8), decoder_hidden=(16, 16),
                    variant=variant, positional_freqs=2)
        base.update(overrides)
        return cls(**base)


# --------------------------------------------------------------------- domain types

@dataclass
class LatentGrid:
    """Reduced representation ``(c_L, h_L, w_L)``; the compressed artifact."""

    values: np.ndarray
    source_modality: int
    target_modality: int
    reduction_factor: int

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ShapeError(f"latent grid must be (c, h, w), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("latent grid contains non-finite values")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class FeatureGrid:
    values: torch.Tensor  # (B, c_F, h_F, w_F)

    @property
    def cell_size(self) -> tuple[float, float]:
        h, w = self.values.shape[-2:]
        return 2.0 / h, 2.0 / w


@dataclass
class CoordinateBatch:
    coords: torch.Tensor  # (..., Q, 2)
    cell: torch.Tensor  # broadcastable to coords

    def __post_init__(self):
        eps = 1e-6
        if self.coords.shape[-1] != 2:
            raise ShapeError(f"coordinates must end in a (y, x) axis, got {tuple(self.coords.shape)}")
        if self.coords.numel() and self.coords.abs().max() > 1 + eps:
            raise DomainError("coordinates outside [-1, 1]")

    @classmethod
    def grid(cls, shape: tuple[int, int], dtype=torch.float32) -> "CoordinateBatch":
        coords = make_coord(shape, dtype=dtype)
        cell = torch.tensor([2.0 / shape[0], 2.0 / shape[1]], dtype=dtype).expand_as(coords)
        return cls(coords, cell)


@dataclass
class LocalQuery:
    """Per-candidate decoder inputs for the local ensemble.

    ``features[i]`` is the ``(B, Q, p)`` input for the i-th nearest latent
    vector and ``weights[i]`` its ``(B, Q)`` ensemble weight.
    """

    features: torch.Tensor
    weights: torch.Tensor
    rel_coords: torch.Tensor

    @property
    def width(self) -> int:
        return self.features.shape[-1]


def make_coord(shape: tuple[int, int], dtype=torch.float32) -> torch.Tensor:
    """Pixel-center coordinates of an ``h x w`` grid, flattened to ``(h*w, 2)``."""
    seqs = [-1.0 + (2.0 * torch.arange(n, dtype=torch.float64) + 1.0) / n for n in shape]
    yy, xx = torch.meshgrid(*seqs, indexing="ij")
    return torch.stack([yy, xx], dim=-1).reshape(-1, 2).to(dtype)


# --------------------------------------------------------------------- building blocks

def conv3x3(c_in: int, c_out: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)


class ResBlock(nn.Module):
    def __init__(self, channels: int, res_scale: float = 1.0):
        super().__init__()
        self.body = nn.Sequential(conv3x3(channels, channels), nn.ReLU(inplace=True),
                                  conv3x3(channels, channels))
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.body(x) * self.res_scale


class DimensionReducer(nn.Module):
    """log2(d) stages of (strided conv, residual blocks, ReLU), then a 1x1 projection."""

    def __init__(self, in_channels: int, width: int, latent_channels: int, d: int, blocks: int = 2):
        super().__init__()
        self.d = d
        self.head = conv3x3(in_channels, width)
        stages = []
        for _ in range(int(round(math.log2(d)))):
            stages += [conv3x3(width, width, stride=2), *[ResBlock(width) for _ in range(blocks)],
                       nn.ReLU(inplace=True)]
        self.stages = nn.Sequential(*stages)
        self.tail = nn.Conv2d(width, latent_channels, 1)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % self.d or w % self.d:
            raise ShapeError(f"reduction factor {self.d} does not divide input {h}x{w}")
        return self.tail(self.stages(self.head(x)))


class EDSRFeatures(nn.Module):
    """EDSR trunk without the upsampling tail: spatial size is preserved."""

    def __init__(self, in_channels: int, channels: int, n_blocks: int, res_scale: float = 1.0):
        super().__init__()
        self.head = conv3x3(in_channels, channels)
        self.body = nn.Sequential(*[ResBlock(channels, res_scale) for _ in range(n_blocks)],
                                  conv3x3(channels, channels))
        self.out_dim = channels

    def forward(self, x):
        h = self.head(x)
        return self.body(h) + h


class StridedGlobalEncoder(nn.Module):
    """Four stride-2 conv stages and global average pooling to a length-g vector."""

    def __init__(self, in_channels: int, widths: tuple[int, ...], out_dim: int):
        super().__init__()
        chans = [in_channels, *widths, out_dim]
        layers = []
        for i in range(len(chans) - 1):
            layers.append(conv3x3(chans[i], chans[i + 1], stride=2))
            if i < len(chans) - 2:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)
        self.out_dim = out_dim

    def forward(self, x):
        return self.net(x).mean(dim=(-2, -1))


def resnet18_global_encoder(in_channels: int, out_dim: int) -> nn.Module:
    from torchvision.models import resnet18

    net = resnet18(weights=None, num_classes=out_dim)
    net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
    net.out_dim = out_dim
    return net


class CoordinateDecoder(nn.Module):
    """MLP over ``[local | global | positional]`` inputs, evaluated per ensemble candidate.

    The first layer is stored as one projection per input group; summing them
    equals a single linear layer on the concatenation, and lets the global
    term be computed once per instance.
    """

    def __init__(self, local_dim: int, hidden: tuple[int, ...], global_dim: int = 0, pos_dim: int = 0):
        super().__init__()
        self.local_dim, self.global_dim, self.pos_dim = local_dim, global_dim, pos_dim
        self.local_proj = nn.Linear(local_dim, hidden[0])
        self.global_proj = nn.Linear(global_dim, hidden[0], bias=False) if global_dim else None
        self.pos_proj = nn.Linear(pos_dim, hidden[0], bias=False) if pos_dim else None
        layers: list[nn.Module] = [nn.ReLU()]
        for a, b in zip(hidden[:-1], hidden[1:]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        layers.append(nn.Linear(hidden[-1], 1))
        self.mlp = nn.Sequential(*layers)

    @property
    def in_width(self) -> int:
        return self.local_dim + self.global_dim + self.pos_dim

    def candidates(self, query: LocalQuery, global_vec=None, positional=None) -> torch.Tensor:
        """Raw prediction of every ensemble candidate, shape ``(n_candidates, B, Q)``."""
        if query.width != self.local_dim:
            raise ShapeError(f"local feature width {query.width} != decoder's {self.local_dim}")
        for name, value, width in (("global", global_vec, self.global_dim),
                                   ("positional", positional, self.pos_dim)):
            if width == 0 and value is not None:
                raise ShapeError(f"this decoder variant takes no {name} input")
            if width and value is None:
                raise ShapeError(f"this decoder variant requires a {name} input")
            if width and value.shape[-1] != width:
                raise ShapeError(f"{name} input width {value.shape[-1]} != {width}")
        z = self.local_proj(query.features)
        if self.global_proj is not None:
            z = z + self.global_proj(global_vec)[None, :, None, :]
        if self.pos_proj is not None:
            z = z + self.pos_proj(positional)[None]
        return self.mlp(z).squeeze(-1)

    def forward(self, query: LocalQuery, global_vec=None, positional=None) -> torch.Tensor:
        preds = self.candidates(query, global_vec, positional)
        return (preds * query.weights).sum(dim=0)


# --------------------------------------------------------------------- functional ops

def liif_query(feat: torch.Tensor, coord: torch.Tensor, cell: torch.Tensor | None = None, *,
               local_ensemble: bool = True, feat_unfold: bool = False,
               cell_decode: bool = True) -> LocalQuery:
    """Gather the nearest latent vectors around each query coordinate.

    ``feat`` is ``(B, C, h, w)``; ``coord`` and ``cell`` are ``(B, Q, 2)``.
    Each candidate input is ``[latent vector, (coord - latent center) * (h, w), cell * (h, w)]``.
    Ensemble weights are the areas of the diagonally opposite rectangles, normalized.
    """
    if feat.dim() != 4 or feat.shape[-1] < 1 or feat.shape[-2] < 1:
        raise ShapeError(f"feature grid must be (B, C, h, w) and non-empty, got {tuple(feat.shape)}")
    B, C, h, w = feat.shape
    if coord.dim() == 2:
        coord = coord.unsqueeze(0).expand(B, -1, -1)
    if cell is not None and cell.dim() == 2:
        cell = cell.unsqueeze(0).expand(B, -1, -1)
    if feat_unfold:
        feat = F.unfold(feat, 3, padding=1).view(B, C * 9, h, w)
        C = C * 9
    flat = feat.flatten(2)
    Q = coord.shape[1]
    scale = coord.new_tensor([h, w])

    if local_ensemble:
        shifts, eps = [(-1, -1), (-1, 1), (1, -1), (1, 1)], 1e-6
    else:
        shifts, eps = [(0, 0)], 0.0

    feats, rels, areas = [], [], []
    for vy, vx in shifts:
        cy = (coord[..., 0] + vy / h + eps).clamp(-1 + 1e-6, 1 - 1e-6)
        cx = (coord[..., 1] + vx / w + eps).clamp(-1 + 1e-6, 1 - 1e-6)
        iy = ((cy + 1) * (h / 2)).floor().long().clamp(0, h - 1)
        ix = ((cx + 1) * (w / 2)).floor().long().clamp(0, w - 1)
        q_feat = torch.gather(flat, 2, (iy * w + ix).unsqueeze(1).expand(B, C, Q)).transpose(1, 2)
        fy, fx = iy.to(coord.dtype), ix.to(coord.dtype)
        center = torch.stack([-1 + (2 * fy + 1) / h, -1 + (2 * fx + 1) / w], dim=-1)
        rel = (coord - center) * scale
        parts = [q_feat, rel]
        if cell_decode:
            if cell is None:
                raise ShapeError("cell decoding requires a cell tensor")
            parts.append(cell * scale)
        feats.append(torch.cat(parts, dim=-1))
        rels.append(rel)
        areas.append((rel[..., 0] * rel[..., 1]).abs() + 1e-9)

    if local_ensemble:
        areas = [areas[3], areas[2], areas[1], areas[0]]
    area = torch.stack(areas)
    weights = area / area.sum(dim=0, keepdim=True)
    return LocalQuery(torch.stack(feats), weights, torch.stack(rels))


def positional_encode(coords: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """``[sin(2^j pi y), cos(2^j pi y), sin(2^j pi x), cos(2^j pi x)]`` for ``j < n_freqs``."""
    if n_freqs < 1:
        raise ConfigError(f"number of positional frequencies must be >= 1, got {n_freqs}")
    freqs = (2.0 ** torch.arange(n_freqs, dtype=coords.dtype, device=coords.device)) * math.pi
    y = coords[..., 0:1] * freqs
    x = coords[..., 1:2] * freqs
    enc = torch.stack([torch.sin(y), torch.cos(y), torch.sin(x), torch.cos(x)], dim=-1)
    return enc.flatten(-2)


# --------------------------------------------------------------------- bundle

def _key(source: int, target: int) -> str:
    if source not in MODALITIES or target not in MODALITIES:
        raise DomainError(f"modalities must be 1 or 2, got source={source} target={target}")
    return f"{source}{target}"


class ModelBundle(nn.Module):
    """Self/cross encoders, feature encoders, global encoders and decoders for two modalities.

    ``encoders["st"]`` maps modality ``s`` inputs to modality ``t`` latents.
    """

    def __init__(self, config: ModelConfig, norm_stats: NormStats | None = None,
                 altitudes: tuple[float, float] | None = None):
        super().__init__()
        self.config = config
        self.norm_stats = norm_stats
        self.altitudes = altitudes
        c = config
        self.encoders = nn.ModuleDict({
            k: DimensionReducer(c.in_channels, c.encoder_width, c.latent_channels, c.d, c.encoder_blocks)
            for k in ("11", "22", "12", "21")})
        self.feature_encoders = nn.ModuleDict({
            str(k): EDSRFeatures(c.latent_channels, c.feature_channels, c.feature_blocks) for k in MODALITIES})
        self.global_encoders = nn.ModuleDict()
        if c.variant.uses_global:
            for k in MODALITIES:
                if c.global_backbone == "resnet18":
                    self.global_encoders[str(k)] = resnet18_global_encoder(c.latent_channels, c.global_dim)
                else:
                    self.global_encoders[str(k)] = StridedGlobalEncoder(c.latent_channels, c.global_widths,
                                                                        c.global_dim)
        pos_dim = 4 * c.positional_freqs if c.variant.uses_positional else 0
        g_dim = c.global_dim if c.variant.uses_global else 0
        self.decoders = nn.ModuleDict({
            str(k): CoordinateDecoder(c.local_dim, c.decoder_hidden, g_dim, pos_dim) for k in MODALITIES})

    @property
    def variant(self) -> DecoderVariant:
        return self.config.variant

    def encode(self, x: torch.Tensor, source: int, target: int) -> torch.Tensor:
        return self.encoders[_key(source, target)](x)

    def decode_latent(self, latent: torch.Tensor, target: int, coord: torch.Tensor,
                      cell: torch.Tensor) -> torch.Tensor:
        """Predict modality ``target`` at ``coord`` from a latent grid ``(B, c_L, h_L, w_L)``."""
        t = _key(target, target)[0]
        feat = self.feature_encoders[t](latent)
        c = self.config
        query = liif_query(feat, coord, cell, local_ensemble=c.local_ensemble, feat_unfold=c.feat_unfold,
                           cell_decode=c.cell_decode)
        g = self.global_encoders[t](latent) if c.variant.uses_global else None
        if coord.dim() == 2:
            coord = coord.unsqueeze(0).expand(latent.shape[0], -1, -1)
        p = positional_encode(coord, c.positional_freqs) if c.variant.uses_positional else None
        return self.decoders[t](query, g, p)

    def forward(self, x: torch.Tensor, source: int, target: int, coord: torch.Tensor,
                cell: torch.Tensor) -> torch.Tensor:
        return self.decode_latent(self.encode(x, source, target), target, coord, cell)

    def manifest(self) -> dict:
        c = self.config
        return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "variant": c.variant.value,
                "d": c.d, "c_L": c.latent_channels, "c_F": c.feature_channels,
                "g": c.global_dim if c.variant.uses_global else 0,
                "L": c.positional_freqs if c.variant.uses_positional else 0,
                "config": c.to_dict(),
                "norm_stats": self.norm_stats.to_dict() if self.norm_stats else None,
                "altitudes": list(self.altitudes) if self.altitudes else None}


def build_model(config: ModelConfig, seed: int = 0, **kwargs) -> ModelBundle:
    """Construct a bundle with parameters drawn from a seeded generator."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return ModelBundle(config, **kwargs)


def save_checkpoint(model: ModelBundle, path, extra: dict | None = None) -> Path:
    """One file per bundle: JSON manifest, named parameter tensors, optional trainer state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"manifest": json.dumps(model.manifest(), sort_keys=True),
               "params": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}}
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> tuple[ModelBundle, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    manifest = json.loads(payload["manifest"])
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a windsr model checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {manifest.get('version')}")
    stats = NormStats.from_dict(manifest["norm_stats"]) if manifest.get("norm_stats") else None
    alts = tuple(manifest["altitudes"]) if manifest.get("altitudes") else None
    model = ModelBundle(ModelConfig.from_dict(manifest["config"]), stats, alts)
    model.load_state_dict(payload["params"])
    if payload["params"] and next(iter(payload["params"].values())).dtype == torch.float64:
        model.double()
    return model, payload.get("extra", {})


# --------------------------------------------------------------------- field-level API

def _dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def _field_tensor(model: ModelBundle, field: WindField, modality: int) -> torch.Tensor:
    v = field.values
    if model.norm_stats is not None:
        v = model.norm_stats.forward(v, modality)
    return torch.as_tensor(v, dtype=_dtype(model))[None, None]


def reduce(model: ModelBundle, source: int, target: int, field: WindField) -> LatentGrid:
    """Encode ``field`` (modality ``source``) into a modality-``target`` latent grid."""
    with torch.no_grad():
        z = model.encode(_field_tensor(model, field, source), source, target)
    return LatentGrid(z[0].cpu().numpy(), source, target, model.config.d)


def extract_feature_grid(model: ModelBundle, target: int, latent: LatentGrid) -> FeatureGrid:
    z = torch.as_tensor(latent.values, dtype=_dtype(model))[None]
    with torch.no_grad():
        return FeatureGrid(model.feature_encoders[str(target)](z))


def global_encode(model: ModelBundle, target: int, latent: LatentGrid) -> torch.Tensor:
    if not model.variant.uses_global:
        raise ConfigError(f"{model.variant.value} bundles carry no global encoder")
    z = torch.as_tensor(latent.values, dtype=_dtype(model))[None]
    with torch.no_grad():
        return model.global_encoders[str(target)](z)[0]


def decode_latent(model: ModelBundle, latent: LatentGrid, batch: CoordinateBatch,
                  chunk: int = 16384) -> np.ndarray:
    """Values of modality ``latent.target_modality`` at the batch coordinates (physical units)."""
    t = latent.target_modality
    dt = _dtype(model)
    z = torch.as_tensor(latent.values, dtype=dt)[None]
    coords = batch.coords.reshape(-1, 2).to(dt)
    cell = batch.cell.expand_as(batch.coords).reshape(-1, 2).to(dt)
    out = []
    with torch.no_grad():
        for i in range(0, coords.shape[0], chunk):
            out.append(model.decode_latent(z, t, coords[None, i:i + chunk], cell[None, i:i + chunk])[0])
    pred = torch.cat(out).cpu().numpy().astype(np.float64) if out else np.zeros(0)
    if model.norm_stats is not None:
        pred = model.norm_stats.inverse(pred, t)
    return pred.reshape(batch.coords.shape[:-1])


def predict(model: ModelBundle, field: WindField, source: int, target: int,
            batch: CoordinateBatch) -> np.ndarray:
    return decode_latent(model, reduce(model, source, target, field), batch)


def decode_grid(model: ModelBundle, latent: LatentGrid, shape: tuple[int, int], *,
                altitude: float | None = None, component: str = "northern", timestamp_id: int = 0) -> WindField:
    values = decode_latent(model, latent, CoordinateBatch.grid(shape)).reshape(shape)
    if altitude is None:
        altitude = model.altitudes[latent.target_modality - 1] if model.altitudes else 1.0
    return WindField(values, altitude, component, timestamp_id)


def predict_grid(model: ModelBundle, field: WindField, source: int, target: int, s: float) -> WindField:
    """Decode onto the ``round(s*h) x round(s*w)`` grid of pixel centers."""
    if not s >= 1:
        raise DomainError(f"super-resolution scale must be >= 1, got {s}")
    h, w = field.shape
    shape = (int(round(s * h)), int(round(s * w)))
    altitude = model.altitudes[target - 1] if model.altitudes else field.altitude
    return decode_grid(model, reduce(model, source, target, field), shape, altitude=altitude,
                       component=field.component, timestamp_id=field.timestamp_id)
