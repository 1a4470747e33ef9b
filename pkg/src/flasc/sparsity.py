"""Top-K magnitude masks and the size of a sparse message."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lora import FlatParams, Layout

GLOBAL = "global"
LAYERWISE = "layerwise"


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray
    layout: Layout
    nnz: int = field(init=False, default=0)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.layout.size,):
            raise ValueError(f"mask length {bits.shape} does not match layout size {self.layout.size}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "nnz", int(np.count_nonzero(bits)))

    @property
    def size(self) -> int:
        return self.layout.size

    @property
    def density(self) -> float:
        return self.nnz / self.size if self.size else 0.0

    @classmethod
    def ones(cls, layout: Layout) -> "Mask":
        return cls(np.ones(layout.size, dtype=bool), layout)

    @classmethod
    def zeros(cls, layout: Layout) -> "Mask":
        return cls(np.zeros(layout.size, dtype=bool), layout)

    def __and__(self, other: "Mask") -> "Mask":
        _check_layout(self.layout, other.layout)
        return Mask(self.bits & other.bits, self.layout)

    def __invert__(self) -> "Mask":
        return Mask(~self.bits, self.layout)

    def __eq__(self, other) -> bool:
        return isinstance(other, Mask) and self.layout == other.layout and np.array_equal(self.bits, other.bits)

    def issubset(self, other: "Mask") -> bool:
        return not np.any(self.bits & ~other.bits)


@dataclass(frozen=True)
class DensityConfig:
    down: float = 1.0
    up: float = 1.0
    scope: str = GLOBAL

    def __post_init__(self):
        for name in ("down", "up"):
            _check_fraction(getattr(self, name), f"density.{name}")
        if self.scope not in (GLOBAL, LAYERWISE):
            raise ValueError(f"density.scope must be 'global' or 'layerwise', got {self.scope!r}")


def _check_fraction(d: float, name: str = "density") -> None:
    if not (0.0 < d <= 1.0):
        raise ValueError(f"{name} must be in (0, 1], got {d}")


def _check_layout(a: Layout, b: Layout) -> None:
    if a != b:
        raise ValueError("layout mismatch")


def keep_count(d: float, n: int) -> int:
    """``ceil(d * n)``, guarded against float noise such as 0.07*100."""
    return min(n, math.ceil(round(d * n, 9)))


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest ``|values|``; ties go to the lower index."""
    order = np.argsort(-np.abs(values), kind="stable")
    return order[:k]


def topk_mask(v: FlatParams, d: float, scope: str = GLOBAL) -> Mask:
    _check_fraction(d)
    bits = np.zeros(v.layout.size, dtype=bool)
    if scope == GLOBAL:
        bits[topk_indices(v.values, keep_count(d, v.layout.size))] = True
    elif scope == LAYERWISE:
        for seg in v.layout.segments:
            chunk = v.values[seg.offset : seg.stop]
            bits[seg.offset + topk_indices(chunk, keep_count(d, seg.size))] = True
    else:
        raise ValueError(f"unknown scope {scope!r}")
    return Mask(bits, v.layout)


def topk_within(v: FlatParams, allowed: Mask, keep: int) -> Mask:
    """Keep the ``keep`` largest-magnitude entries among ``allowed`` positions."""
    _check_layout(v.layout, allowed.layout)
    candidates = np.flatnonzero(allowed.bits)
    chosen = candidates[topk_indices(v.values[candidates], keep)]
    bits = np.zeros(v.layout.size, dtype=bool)
    bits[chosen] = True
    return Mask(bits, v.layout)


def apply_mask(v: FlatParams, m: Mask) -> FlatParams:
    _check_layout(v.layout, m.layout)
    return FlatParams(np.where(m.bits, v.values, 0.0), v.layout)


PARAM_COUNT = "param-count"
BYTE_EXACT = "byte-exact"


@dataclass(frozen=True)
class SizeModel:
    """How a sparse message is charged.

    ``param-count`` charges one unit per transmitted value. ``byte-exact``
    charges a bitmap of the positions plus 4 bytes per float32 value.
    """

    mode: str = PARAM_COUNT
    value_bits: int = 32

    def __post_init__(self):
        if self.mode not in (PARAM_COUNT, BYTE_EXACT):
            raise ValueError(f"size mode must be {PARAM_COUNT!r} or {BYTE_EXACT!r}, got {self.mode!r}")


def message_size(m: Mask, model: SizeModel = SizeModel()) -> int:
    if model.mode == PARAM_COUNT:
        return m.nnz
    return bitmap_size(m.size, m.nnz, model.value_bits)


def bitmap_size(length: int, nnz: int, value_bits: int = 32) -> int:
    return math.ceil(length / 8) + (value_bits // 8) * nnz


def encode_sparse(v: FlatParams, m: Mask) -> bytes:
    """Bitmap (LSB-first per byte) followed by little-endian float32 values."""
    _check_layout(v.layout, m.layout)
    bitmap = np.packbits(m.bits, bitorder="little").tobytes()
    payload = v.values[m.bits].astype("<f4").tobytes()
    return bitmap + payload


def decode_sparse(blob: bytes, layout: Layout) -> tuple[FlatParams, Mask]:
    n_map = math.ceil(layout.size / 8)
    if len(blob) < n_map:
        raise ValueError("truncated bitmap")
    bits = np.unpackbits(np.frombuffer(blob[:n_map], dtype=np.uint8), bitorder="little")[: layout.size].astype(bool)
    vals = np.frombuffer(blob[n_map:], dtype="<f4")
    if vals.size != np.count_nonzero(bits):
        raise ValueError(f"payload has {vals.size} values, bitmap marks {np.count_nonzero(bits)}")
    out = np.zeros(layout.size)
    out[bits] = vals
    return FlatParams(out, layout), Mask(bits, layout)
