"""Wind power law: v_out = v_in * (h_out / h_in) ** alpha."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

DEFAULT_ALPHA = 0.16


@dataclass(frozen=True)
class PowerLawSpec:
    h_in: float
    h_out: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not (self.h_in > 0 and self.h_out > 0):
            raise ConfigError(f"altitudes must be positive, got {self.h_in}, {self.h_out}")

    @property
    def ratio(self) -> float:
        return (self.h_out / self.h_in) ** self.alpha


def power_law_transform(field, spec: PowerLawSpec) -> np.ndarray:
    """Scale a wind-speed field from ``spec.h_in`` to ``spec.h_out``.

    Negative speeds are clamped to zero (with a warning) before scaling.
    """
    v = np.asarray(field, dtype=np.float64)
    if np.any(v < 0):
        warnings.warn(f"{int(np.sum(v < 0))} negative wind speeds clamped to 0 before power-law transform",
                      RuntimeWarning, stacklevel=2)
        v = np.maximum(v, 0.0)
    if spec.h_in == spec.h_out:
        return v.copy()
    return v * spec.ratio
