"""Multi-altitude wind-field data: synthesis, ingestion, pairing, normalization, splits.

Fields are stored as float64 arrays in memory and persisted as raw
little-endian float32 files with a JSON sidecar per batch.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines.powerlaw import DEFAULT_ALPHA
from .baselines.resample import bicubic_resize, output_shape
from .errors import (ConfigError, DegenerateRangeError, DomainError, IngestionError, RangeError,
                     SizeError)

log = logging.getLogger(__name__)

COMPONENTS = ("northern", "eastern")
WTK_ALTITUDES = (10, 60, 160, 200)


@dataclass(frozen=True)
class WindField:
    values: np.ndarray
    altitude: float
    component: str = "northern"
    timestamp_id: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise DomainError(f"wind field must be a 2-D grid of at least 2x2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("wind field contains non-finite values")
        if not self.altitude > 0:
            raise DomainError(f"altitude must be positive, got {self.altitude}")
        if self.component not in COMPONENTS:
            raise DomainError(f"component must be one of {COMPONENTS}, got {self.component!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values) -> "WindField":
        return replace(self, values=values)


@dataclass(frozen=True)
class FieldPair:
    hr: WindField
    sr_target: WindField
    scale: float


@dataclass(frozen=True)
class NormStats:
    """Per-modality (min, max) used for min-max scaling to [0, 1]."""

    m1: tuple[float, float]
    m2: tuple[float, float]

    def bounds(self, modality: int) -> tuple[float, float]:
        if modality == 1:
            return self.m1
        if modality == 2:
            return self.m2
        raise DomainError(f"unknown modality {modality}")

    def forward(self, values, modality: int) -> np.ndarray:
        lo, hi = self.bounds(modality)
        return (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)

    def inverse(self, values, modality: int) -> np.ndarray:
        lo, hi = self.bounds(modality)
        return np.asarray(values, dtype=np.float64) * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"m1": list(self.m1), "m2": list(self.m2)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(tuple(d["m1"]), tuple(d["m2"]))


@dataclass
class ModalityPairBatch:
    fields_m1: list[WindField]
    fields_m2: list[WindField]
    norm_stats: NormStats | None = None
    normalized: bool = False

    def __post_init__(self):
        if len(self.fields_m1) != len(self.fields_m2):
            raise SizeError(f"modality lists differ in length: {len(self.fields_m1)} vs {len(self.fields_m2)}")
        for a, b in zip(self.fields_m1, self.fields_m2):
            if a.timestamp_id != b.timestamp_id:
                raise DomainError(f"timestamp mismatch {a.timestamp_id} vs {b.timestamp_id}")
            if a.altitude == b.altitude:
                raise DomainError(f"modalities share altitude {a.altitude}")

    def __len__(self) -> int:
        return len(self.fields_m1)

    @property
    def altitudes(self) -> tuple[float, float]:
        if not self.fields_m1:
            return (math.nan, math.nan)
        return self.fields_m1[0].altitude, self.fields_m2[0].altitude

    @property
    def timestamp_ids(self) -> list[int]:
        return [f.timestamp_id for f in self.fields_m1]

    def modality(self, k: int) -> list[WindField]:
        if k == 1:
            return self.fields_m1
        if k == 2:
            return self.fields_m2
        raise DomainError(f"unknown modality {k}")

    def stack(self, k: int) -> np.ndarray:
        """Values of modality ``k`` as an ``(N, h, w)`` array."""
        fs = self.modality(k)
        if not fs:
            return np.zeros((0, 0, 0))
        return np.stack([f.values for f in fs])

    def subset(self, indices: Sequence[int]) -> "ModalityPairBatch":
        return ModalityPairBatch([self.fields_m1[i] for i in indices], [self.fields_m2[i] for i in indices],
                                 self.norm_stats, self.normalized)


@dataclass(frozen=True)
class DatasetSplit:
    train: ModalityPairBatch
    test: ModalityPairBatch
    seed: int


# --------------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthSpec:
    height: int = 64
    width: int = 64
    altitudes: tuple[float, ...] = (10.0, 160.0)
    spectral_exponent: float = 3.0
    perturbation: float = 0.1
    count: int = 100
    mean_speed: float = 6.0
    std_speed: float = 1.5
    alpha: float = DEFAULT_ALPHA
    component: str = "northern"

    def validate(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ConfigError(f"synthetic grid must be at least 16x16, got {self.height}x{self.width}")
        if not self.spectral_exponent > 0:
            raise ConfigError(f"spectral exponent must be positive, got {self.spectral_exponent}")
        if not self.altitudes or any(not h > 0 for h in self.altitudes):
            raise ConfigError(f"altitudes must be positive, got {self.altitudes}")
        if self.count < 0 or self.perturbation < 0 or self.std_speed < 0:
            raise ConfigError("count, perturbation and std_speed must be non-negative")
        if self.component not in COMPONENTS:
            raise ConfigError(f"component must be one of {COMPONENTS}")


@dataclass
class FieldStack:
    """``values[t, a]`` is the field at timestamp ``t`` and altitude ``altitudes[a]``."""

    values: np.ndarray
    altitudes: tuple[float, ...]
    component: str = "northern"
    timestamp_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.timestamp_ids is None:
            self.timestamp_ids = np.arange(self.values.shape[0])

    def __len__(self) -> int:
        return self.values.shape[0]

    def fields(self, altitude: float) -> list[WindField]:
        a = self.altitudes.index(altitude)
        return [WindField(self.values[t, a], altitude, self.component, int(tid))
                for t, tid in enumerate(self.timestamp_ids)]

    def pair(self, h1: float, h2: float) -> ModalityPairBatch:
        for h in (h1, h2):
            if h not in self.altitudes:
                raise IngestionError(f"altitude {h} not in stack; available: {list(self.altitudes)}")
        return ModalityPairBatch(self.fields(h1), self.fields(h2))


def gaussian_random_field(rng: np.random.Generator, shape: tuple[int, int], beta: float) -> np.ndarray:
    """Zero-mean, unit-variance field with isotropic power spectrum ~ k**(-beta)."""
    h, w = shape
    noise = rng.standard_normal(shape)
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.rfftfreq(w)[None, :]
    k = np.sqrt(ky**2 + kx**2)
    k[0, 0] = np.inf
    spectrum = np.fft.rfft2(noise) * k ** (-beta / 2.0)
    g = np.fft.irfft2(spectrum, s=shape)
    std = g.std()
    return g / std if std > 0 else g


def synth_stack(seed: int, spec: SynthSpec = SynthSpec()) -> FieldStack:
    """Synthetic multi-altitude stack coupled across altitudes by the wind power law.

    The lowest altitude carries ``mean + std * GRF``; every other altitude is that
    base scaled by ``(h / h_min) ** alpha`` plus a smoother perturbation whose
    standard deviation is ``perturbation`` times the scaled base's.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    alts = tuple(float(a) for a in spec.altitudes)
    h_ref = min(alts)
    shape = (spec.height, spec.width)
    out = np.empty((spec.count, len(alts), *shape))
    for t in range(spec.count):
        base = spec.mean_speed + spec.std_speed * gaussian_random_field(rng, shape, spec.spectral_exponent)
        base = np.maximum(base, 0.0)
        for a, h in enumerate(alts):
            ratio = (h / h_ref) ** spec.alpha
            v = base * ratio
            if spec.perturbation > 0 and h != h_ref:
                pert = gaussian_random_field(rng, shape, spec.spectral_exponent + 2.0)
                v = np.maximum(v + spec.perturbation * spec.std_speed * ratio * pert, 0.0)
            out[t, a] = v
    return FieldStack(out, alts, spec.component)


# --------------------------------------------------------------------- pairing

def make_pair(hr: WindField, s: float) -> FieldPair:
    """Bicubic super-resolution target at scale ``s`` for ``hr``."""
    if not s >= 1:
        raise DomainError(f"super-resolution scale must be >= 1, got {s}")
    target = bicubic_resize(hr.values, size=output_shape(hr.shape, s))
    return FieldPair(hr, hr.with_values(target), float(s))


# --------------------------------------------------------------------- normalization

def compute_norm_stats(batch: ModalityPairBatch) -> NormStats:
    bounds = []
    for k in (1, 2):
        if not len(batch):
            raise SizeError("cannot compute normalization statistics on an empty batch")
        v = batch.stack(k)
        lo, hi = float(v.min()), float(v.max())
        if not hi > lo:
            raise DegenerateRangeError(f"modality {k} is constant ({lo}); min-max scaling undefined")
        bounds.append((lo, hi))
    return NormStats(*bounds)


def normalize(batch: ModalityPairBatch, stats: NormStats | None = None) -> tuple[ModalityPairBatch, NormStats]:
    """Min-max scale both modalities; ``stats`` from a training split may be reused (no clipping)."""
    if batch.normalized:
        raise DomainError("batch is already normalized")
    if stats is None:
        stats = compute_norm_stats(batch)
    out = [[f.with_values(stats.forward(f.values, k)) for f in batch.modality(k)] for k in (1, 2)]
    return ModalityPairBatch(out[0], out[1], stats, True), stats


def denormalize(batch: ModalityPairBatch, stats: NormStats | None = None) -> ModalityPairBatch:
    stats = stats or batch.norm_stats
    if stats is None or not batch.normalized:
        raise DomainError("batch is not normalized")
    out = [[f.with_values(stats.inverse(f.values, k)) for f in batch.modality(k)] for k in (1, 2)]
    return ModalityPairBatch(out[0], out[1], stats, False)


# --------------------------------------------------------------------- ingestion

def ingest_wtk(path, altitudes: Sequence[float], window: tuple[tuple[int, int], tuple[int, int]],
               timestamps: Sequence[int], *, component: str = "northern",
               dataset_template: str = "{component}_{altitude}m") -> ModalityPairBatch:
    """Extract aligned windows for two altitudes from a WIND Toolkit-style HDF5 file.

    Each altitude lives in one 3-D dataset ``(time, row, col)`` named by
    ``dataset_template`` (``{altitude}`` and ``{component}`` placeholders).
    """
    import h5py

    if len(altitudes) != 2:
        raise ConfigError(f"exactly two altitudes are paired, got {list(altitudes)}")
    (r0, r1), (c0, c1) = window
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with h5py.File(path, "r") as f:
        pattern = re.compile("^" + re.escape(dataset_template)
                             .replace(re.escape("{altitude}"), r"(\d+(?:\.\d+)?)")
                             .replace(re.escape("{component}"), re.escape(component)) + "$")
        available = sorted(float(m.group(1)) for name in f.keys() if (m := pattern.match(name)))
        per_alt = []
        for h in altitudes:
            name = dataset_template.format(altitude=_fmt_alt(h), component=component)
            if name not in f:
                raise IngestionError(f"dataset {name!r} for altitude {h} m missing; "
                                     f"available altitudes: {[_fmt_alt(a) for a in available]}")
            ds = f[name]
            if ds.ndim != 3:
                raise IngestionError(f"dataset {name!r} must be 3-D (time, row, col), got {ds.shape}")
            n_t, n_r, n_c = ds.shape
            if not (0 <= r0 < r1 <= n_r and 0 <= c0 < c1 <= n_c):
                raise RangeError(f"window rows {r0}:{r1} cols {c0}:{c1} outside dataset extent {(n_r, n_c)}")
            if any(not 0 <= t < n_t for t in timestamps):
                raise RangeError(f"timestamp index outside [0, {n_t})")
            per_alt.append([WindField(np.asarray(ds[t, r0:r1, c0:c1], dtype=np.float64), float(h), component, int(t))
                            for t in timestamps])
    log.info("ingested %d timestamps at altitudes %s from %s", len(timestamps), list(altitudes), path)
    return ModalityPairBatch(per_alt[0], per_alt[1])


def _fmt_alt(h: float) -> str:
    return str(int(h)) if float(h).is_integer() else str(h)


# --------------------------------------------------------------------- splitting

def split(pool: ModalityPairBatch, n_train: int, n_test: int, seed: int) -> DatasetSplit:
    """Random disjoint train/test subsets, sampled without replacement."""
    if n_train < 0 or n_test < 0:
        raise SizeError("split sizes must be non-negative")
    if n_train + n_test > len(pool):
        raise SizeError(f"requested {n_train}+{n_test} instances but only {len(pool)} available")
    if len(set(pool.timestamp_ids)) != len(pool):
        raise DomainError("pool contains duplicate timestamp ids")
    order = np.random.default_rng(seed).permutation(len(pool))
    return DatasetSplit(pool.subset(order[:n_train]), pool.subset(order[n_train:n_train + n_test]), seed)


# --------------------------------------------------------------------- persistence

SIDECAR = "batch.json"
FORMAT_VERSION = 1


def save_batch(batch: ModalityPairBatch, directory) -> Path:
    """Write one raw float32 file per field plus a JSON sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for k in (1, 2):
        for f in batch.modality(k):
            name = f"m{k}_t{f.timestamp_id:06d}.f32"
            (d / name).write_bytes(np.ascontiguousarray(f.values, dtype="<f4").tobytes())
            records.append({"file": name, "modality": k, "altitude": f.altitude, "component": f.component,
                            "timestamp_id": f.timestamp_id, "shape": list(f.shape)})
    meta = {"format": "windsr-batch", "version": FORMAT_VERSION, "normalized": batch.normalized,
            "norm_stats": batch.norm_stats.to_dict() if batch.norm_stats else None, "fields": records}
    (d / SIDECAR).write_text(json.dumps(meta, indent=1))
    return d


def load_batch(directory) -> ModalityPairBatch:
    d = Path(directory)
    meta = json.loads((d / SIDECAR).read_text())
    if meta.get("format") != "windsr-batch":
        raise IngestionError(f"{d / SIDECAR} is not a windsr batch sidecar")
    lists: dict[int, list[WindField]] = {1: [], 2: []}
    for r in meta["fields"]:
        raw = np.fromfile(d / r["file"], dtype="<f4").astype(np.float64).reshape(r["shape"])
        lists[r["modality"]].append(WindField(raw, r["altitude"], r["component"], r["timestamp_id"]))
    stats = NormStats.from_dict(meta["norm_stats"]) if meta.get("norm_stats") else None
    return ModalityPairBatch(lists[1], lists[2], stats, bool(meta.get("normalized")))


def save_stack(stack: FieldStack, directory) -> Path:
    """Persist every altitude of a stack; the sidecar lists altitude and timestamp per file."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for t, tid in enumerate(stack.timestamp_ids):
        for a, h in enumerate(stack.altitudes):
            name = f"h{_fmt_alt(h)}_t{int(tid):06d}.f32"
            (d / name).write_bytes(np.ascontiguousarray(stack.values[t, a], dtype="<f4").tobytes())
            records.append({"file": name, "altitude": h, "component": stack.component,
                            "timestamp_id": int(tid), "shape": list(stack.values.shape[2:])})
    meta = {"format": "windsr-stack", "version": FORMAT_VERSION, "altitudes": list(stack.altitudes),
            "component": stack.component, "fields": records}
    (d / "stack.json").write_text(json.dumps(meta, indent=1))
    return d


def load_stack(directory) -> FieldStack:
    d = Path(directory)
    meta = json.loads((d / "stack.json").read_text())
    alts = tuple(meta["altitudes"])
    tids = sorted({r["timestamp_id"] for r in meta["fields"]})
    index = {t: i for i, t in enumerate(tids)}
    if not meta["fields"]:
        return FieldStack(np.zeros((0, len(alts), 0, 0)), alts, meta["component"], np.asarray(tids, dtype=np.int64))
    shape = meta["fields"][0]["shape"]
    values = np.empty((len(tids), len(alts), *shape))
    for r in meta["fields"]:
        raw = np.fromfile(d / r["file"], dtype="<f4").astype(np.float64).reshape(r["shape"])
        values[index[r["timestamp_id"]], alts.index(r["altitude"])] = raw
    return FieldStack(values, alts, meta["component"], np.asarray(tids, dtype=np.int64))
