"""Quality and compression metrics for reconstructed wind fields.

Conventions: ``data_range`` defaults to ``max - min`` of the reference
field; PSNR of an exact reconstruction is ``inf``; SSIM uses an 11-tap
Gaussian window (sigma 1.5) and averages the map over the valid region.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import DomainError, ShapeError

BYTES_PER_ELEMENT = 4


def _pair(reference, candidate) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {cand.shape}")
    return ref, cand


def data_range_of(reference) -> float:
    ref = np.asarray(reference, dtype=np.float64)
    return float(ref.max() - ref.min())


def psnr(reference, candidate, data_range: float | None = None) -> float:
    ref, cand = _pair(reference, candidate)
    if data_range is None:
        data_range = data_range_of(ref)
    if not data_range > 0:
        raise DomainError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((ref - cand) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim_map(reference, candidate, data_range: float | None = None, window: int = 11,
             sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    ref, cand = _pair(reference, candidate)
    if ref.ndim != 2 or min(ref.shape) < window:
        raise DomainError(f"field {ref.shape} smaller than the {window}x{window} SSIM window")
    if data_range is None:
        data_range = data_range_of(ref)
    if not data_range > 0:
        raise DomainError(f"data_range must be positive, got {data_range}")
    g = gaussian_window(window, sigma)

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    mu_x, mu_y = blur(ref), blur(cand)
    sxx = blur(ref * ref) - mu_x * mu_x
    syy = blur(cand * cand) - mu_y * mu_y
    sxy = blur(ref * cand) - mu_x * mu_y
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    pad = (window - 1) // 2
    return (num / den)[pad:-pad or None, pad:-pad or None]


def ssim(reference, candidate, data_range: float | None = None, **params) -> float:
    return float(ssim_map(reference, candidate, data_range, **params).mean())


def _size(obj, kind: str) -> int:
    if kind == "bytes":
        if isinstance(obj, (bytes, bytearray, memoryview)):
            return len(obj)
        if hasattr(obj, "__len__") and not isinstance(obj, np.ndarray):
            return len(obj)
        return int(np.asarray(obj).size) * BYTES_PER_ELEMENT
    if hasattr(obj, "numel"):
        return int(obj.numel())
    return int(np.asarray(obj).size)


def compression_ratio(kind: str, original, compressed) -> float:
    """Percent size reduction ``100 * (1 - compressed / original)``.

    ``kind="grid"`` counts array elements (bicubic and latent grids);
    ``kind="bytes"`` counts bytes, taking the original at 4 bytes per element.
    """
    if kind not in ("grid", "bytes"):
        raise DomainError(f"unknown compression-ratio kind {kind!r}")
    n_orig = _size(original, kind)
    if n_orig == 0:
        raise DomainError("original has zero size")
    n_comp = _size(compressed, kind)
    return 100.0 * (n_orig - n_comp) / n_orig


@dataclass
class MetricRecord:
    method: str
    d_or_Q: str
    h_in: float
    h_out: float
    component: str
    cr: float
    psnr: float
    ssim: float
    scale: float = 1.0
    n_fields: int = 1
    n_infinite: int = 0

    def __post_init__(self):
        if not self.cr < 100.0:
            raise DomainError(f"compression ratio {self.cr} must be below 100")
        if not -1.0 <= self.ssim <= 1.0 and not math.isnan(self.ssim):
            raise DomainError(f"SSIM {self.ssim} outside [-1, 1]")


COLUMNS = [f.name for f in fields(MetricRecord)]


def aggregate(method: str, d_or_Q: str, h_in: float, h_out: float, component: str,
              crs, psnrs, ssims, scale: float = 1.0) -> MetricRecord:
    """Mean per-field metrics; infinite PSNRs are excluded from the mean and counted."""
    psnrs = np.asarray(psnrs, dtype=np.float64)
    finite = np.isfinite(psnrs)
    mean_psnr = float(psnrs[finite].mean()) if finite.any() else math.inf
    return MetricRecord(method, d_or_Q, float(h_in), float(h_out), component,
                        float(np.mean(crs)), mean_psnr, float(np.mean(ssims)), float(scale),
                        int(psnrs.size), int((~finite).sum()))


def records_to_csv(records: list[MetricRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in records:
        row = asdict(r)
        writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in COLUMNS)])
    return buf.getvalue()


def records_to_json(records: list[MetricRecord]) -> str:
    rows = []
    for r in records:
        row = asdict(r)
        # JSON has no infinity; keep the sentinel explicit
        row["psnr"] = "inf" if math.isinf(r.psnr) else r.psnr
        rows.append(row)
    return json.dumps({"columns": COLUMNS, "records": rows}, indent=2)


def records_from_json(text: str) -> list[MetricRecord]:
    out = []
    for row in json.loads(text)["records"]:
        if row["psnr"] == "inf":
            row["psnr"] = math.inf
        out.append(MetricRecord(**row))
    return out
