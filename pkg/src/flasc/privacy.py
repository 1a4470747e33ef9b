"""Server-side (global) Gaussian mechanism for the aggregated adapter update.

Order of operations: the server receives already-masked client deltas, clips
each to L2 norm ``C``, sums them, divides by ``n * C`` and adds Gaussian noise
with standard deviation ``sigma / N_sim`` per coordinate. ``N_sim`` is the
nominal cohort whose noise level is being simulated with ``n`` real clients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numeric import RngStream, gaussian_draw, l2_norm


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float
    noise_multiplier: float = 0.0
    simulated_cohort: int = 1

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValueError(f"dp.clip must be > 0, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError(f"dp.sigma must be >= 0, got {self.noise_multiplier}")
        if self.simulated_cohort < 1:
            raise ValueError(f"dp.cohort must be >= 1, got {self.simulated_cohort}")

    @property
    def noise_std(self) -> float:
        return self.noise_multiplier / self.simulated_cohort


def clip_update(delta, clip_norm: float) -> np.ndarray:
    if not clip_norm > 0:
        raise ValueError("clip norm must be positive")
    delta = np.asarray(delta, dtype=np.float64)
    norm = l2_norm(delta)  # raises on non-finite input
    if norm <= clip_norm:
        return delta.copy()
    scale = clip_norm / norm
    out = delta * scale
    # rounding can leave the result an ulp above the bound
    while l2_norm(out) > clip_norm:
        scale = np.nextafter(scale, 0.0)
        out = delta * scale
    return out


def noiseless_aggregate(deltas: Sequence[np.ndarray], dp: DpConfig, n: int | None = None) -> np.ndarray:
    if not len(deltas):
        raise ValueError("dp_aggregate: no updates")
    n = len(deltas) if n is None else n
    total = clip_update(deltas[0], dp.clip_norm)
    for d in deltas[1:]:
        total = total + clip_update(d, dp.clip_norm)
    return total / (n * dp.clip_norm)


def dp_aggregate(deltas: Sequence[np.ndarray], dp: DpConfig, stream: RngStream, n: int | None = None) -> np.ndarray:
    """Clipped, normalized, noised mean of ``deltas`` (ascending order)."""
    g = noiseless_aggregate(deltas, dp, n)
    if dp.noise_multiplier == 0:
        return g
    return g + gaussian_draw(stream, g.size, dp.noise_std)
