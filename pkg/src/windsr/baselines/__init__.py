"""Classical compression and transfer baselines."""

from .blob import CompressedBlob, ppm_compress, ppm_decompress
from .companding import (MuLawSpec, decompanded_bin_widths, dequantize, mu_law_decode, mu_law_encode,
                         quantize)
from .pipeline import (BicubicMethod, PPMMethod, baseline_pipeline, compress_field, decompress_field,
                       reconstruct)
from .powerlaw import PowerLawSpec, power_law_transform
from .resample import bicubic_resize, cubic_kernel

__all__ = [
    "BicubicMethod", "CompressedBlob", "MuLawSpec", "PPMMethod", "PowerLawSpec", "baseline_pipeline",
    "bicubic_resize", "compress_field", "cubic_kernel", "decompanded_bin_widths", "decompress_field",
    "dequantize", "mu_law_decode", "mu_law_encode", "power_law_transform", "ppm_compress",
    "ppm_decompress", "quantize", "reconstruct",
]
