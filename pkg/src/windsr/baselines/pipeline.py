"""Compress-reconstruct-transform pipelines used as classical baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DecodeError
from ..metrics import compression_ratio
from .blob import FLAG_RAW_FLOAT32, FLAG_RAW_FLOAT64, CompressedBlob, ppm_compress, ppm_decompress
from .companding import MuLawSpec, dequantize, mu_law_decode, mu_law_encode, quantize
from .powerlaw import DEFAULT_ALPHA, PowerLawSpec, power_law_transform
from .resample import bicubic_resize


@dataclass(frozen=True)
class PPMMethod:
    """μ-law + uniform quantization + PPM.

    ``Q=None`` codes the raw IEEE bytes losslessly: float32 when every value
    survives the cast, float64 otherwise.
    """

    Q: int | None = 16
    mu: float = 255.0
    order: int = 3

    @property
    def name(self) -> str:
        return "PPM" if self.Q is not None else "PPM-lossless"

    @property
    def parameter(self) -> str:
        return f"Q={self.Q}" if self.Q is not None else "raw"


@dataclass(frozen=True)
class BicubicMethod:
    d: int = 8

    name = "Bicubic"

    @property
    def parameter(self) -> str:
        return f"d={self.d}"


def to_unit_range(field: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine map of ``field`` onto [-1, 1] using its own min/max."""
    vmin = float(np.min(field))
    vmax = float(np.max(field))
    if vmax == vmin:
        return np.zeros_like(field, dtype=np.float64), vmin, vmax
    return 2.0 * (field - vmin) / (vmax - vmin) - 1.0, vmin, vmax


def from_unit_range(y: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    if vmax == vmin:
        return np.full(y.shape, vmin, dtype=np.float64)
    return (y + 1.0) * 0.5 * (vmax - vmin) + vmin


def compress_field(field, method: PPMMethod) -> CompressedBlob:
    x = np.asarray(field, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"expected a 2-D field, got shape {x.shape}")
    if method.Q is None:
        single = np.ascontiguousarray(x, dtype="<f4")
        if np.array_equal(single.astype(np.float64), x):
            raw, flags = single.view(np.uint8), FLAG_RAW_FLOAT32
        else:
            raw, flags = np.ascontiguousarray(x, dtype="<f8").view(np.uint8), FLAG_RAW_FLOAT64
        return ppm_compress(raw.ravel(), 256, method.order, shape=x.shape, flags=flags)
    spec = MuLawSpec(method.mu, method.Q)
    y, vmin, vmax = to_unit_range(x)
    symbols = quantize(mu_law_encode(y, spec.mu), spec.Q)
    return ppm_compress(symbols, spec.Q, method.order, shape=x.shape, vmin=vmin, vmax=vmax, mu=spec.mu)


def decompress_field(blob: CompressedBlob | bytes) -> np.ndarray:
    if not isinstance(blob, CompressedBlob):
        blob = CompressedBlob.from_bytes(blob)
    symbols = ppm_decompress(blob)
    if blob.flags & FLAG_RAW_FLOAT64:
        return symbols.astype(np.uint8).view("<f8").reshape(blob.shape)
    if blob.flags & FLAG_RAW_FLOAT32:
        return symbols.astype(np.uint8).view("<f4").reshape(blob.shape).astype(np.float64)
    if blob.mu <= 0:
        raise DecodeError("quantized blob carries no companding constant")
    y = mu_law_decode(dequantize(symbols, blob.alphabet), blob.mu)
    return from_unit_range(y, blob.vmin, blob.vmax).reshape(blob.shape)


def reconstruct(field, method) -> tuple[np.ndarray, float]:
    """Compress and reconstruct ``field`` at its own altitude; returns (reconstruction, CR %)."""
    x = np.asarray(field, dtype=np.float64)
    if isinstance(method, PPMMethod):
        blob = compress_field(x, method)
        return decompress_field(blob.to_bytes()), compression_ratio("bytes", x, blob)
    if isinstance(method, BicubicMethod):
        h, w = x.shape
        if h % method.d or w % method.d:
            raise ConfigError(f"d={method.d} does not divide field shape {x.shape}")
        small = bicubic_resize(x, size=(h // method.d, w // method.d))
        return bicubic_resize(small, size=(h, w)), compression_ratio("grid", x, small)
    raise ConfigError(f"unknown baseline method {method!r}")


def baseline_pipeline(field, method, h1: float, h2: float,
                      alpha: float = DEFAULT_ALPHA) -> tuple[np.ndarray, float]:
    """Compress at ``h1``, reconstruct, then carry the result to ``h2`` with the power law."""
    rec, cr = reconstruct(field, method)
    return power_law_transform(rec, PowerLawSpec(h1, h2, alpha)), cr
