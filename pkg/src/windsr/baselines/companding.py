"""μ-law companding and uniform quantization on [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError

_TOL = 1e-9


@dataclass(frozen=True)
class MuLawSpec:
    mu: float = 255.0
    Q: int = 16

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if int(self.Q) != self.Q or self.Q < 2:
            raise ConfigError(f"Q must be an integer >= 2, got {self.Q}")


def _check_unit(x: np.ndarray) -> None:
    if x.size and np.max(np.abs(x)) > 1.0 + _TOL:
        raise DomainError(f"input outside [-1, 1]: max |x| = {np.max(np.abs(x))}")


def mu_law_encode(x, mu: float = 255.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_unit(x)
    x = np.clip(x, -1.0, 1.0)
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


def mu_law_decode(y, mu: float = 255.0) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    _check_unit(y)
    y = np.clip(y, -1.0, 1.0)
    return np.sign(y) * np.expm1(np.abs(y) * np.log1p(mu)) / mu


def quantize(y, Q: int) -> np.ndarray:
    """Map values in [-1, 1] to symbols ``0..Q-1`` with uniform bins of width 2/Q."""
    if Q < 2:
        raise ConfigError(f"Q must be >= 2, got {Q}")
    y = np.asarray(y, dtype=np.float64)
    sym = np.floor((y + 1.0) * (Q / 2.0)).astype(np.int64)
    return np.clip(sym, 0, Q - 1)


def dequantize(symbols, Q: int) -> np.ndarray:
    """Bin centers for ``symbols``."""
    if Q < 2:
        raise ConfigError(f"Q must be >= 2, got {Q}")
    s = np.asarray(symbols, dtype=np.float64)
    return -1.0 + (s + 0.5) * (2.0 / Q)


def decompanded_bin_widths(Q: int, mu: float = 255.0) -> np.ndarray:
    """Width of every quantization bin after mapping its edges back through μ-law."""
    edges = np.linspace(-1.0, 1.0, Q + 1)
    return np.diff(mu_law_decode(edges, mu))
