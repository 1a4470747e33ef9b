"""Dense numeric kernels, seeded random streams and a finite-difference oracle.

Everything runs in float64. Matrix products accumulate over the inner index in
ascending order so results are reproducible bit-for-bit independent of the
BLAS build in use.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with a fixed summation order.

    ``out[i, j] = (((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...)``, i.e. the inner
    index is accumulated in ascending order, matching a naive triple loop.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    n, inner = a.shape
    m = b.shape[1]
    if inner == 0:
        return np.zeros((n, m))
    out = a[:, 0:1] * b[0:1, :]
    for k in range(1, inner):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def l2_norm(v) -> float:
    """Euclidean norm, scaled by the largest magnitude to avoid under/overflow."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError("l2_norm: non-finite input")
    if v.size == 0:
        return 0.0
    peak = float(np.max(np.abs(v)))
    if peak == 0.0:
        return 0.0
    w = v / peak
    # np.cumsum accumulates strictly left to right
    return peak * math.sqrt(float(np.cumsum(w * w)[-1]))


@dataclass(frozen=True)
class RngStream:
    """Deterministic, label-addressed random stream.

    A stream is a pure descriptor: ``generator()`` always restarts the same
    sequence. Child streams are derived by hashing the root seed together with
    the full label, so there is no shared generator state between clients or
    rounds.
    """

    root_seed: int
    label: tuple = ()

    def child(self, *parts) -> "RngStream":
        return RngStream(self.root_seed, self.label + tuple(parts))

    def _key(self) -> list[int]:
        digest = hashlib.blake2b(repr(self.label).encode(), digest_size=16).digest()
        words = np.frombuffer(digest, dtype=np.uint32).tolist()
        seed = int(self.root_seed) & 0xFFFFFFFFFFFFFFFF
        return [seed & 0xFFFFFFFF, seed >> 32, *words]

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(self._key())))


def gaussian_draw(stream: RngStream, n: int, std: float) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.zeros(n)
    return stream.generator().standard_normal(n) * std


def finite_diff_grad(
    loss_fn: Callable[[np.ndarray], float], params, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at ``params``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(params, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        f_plus = loss_fn(x)
        x[i] = orig - h
        f_minus = loss_fn(x)
        x[i] = orig
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad
