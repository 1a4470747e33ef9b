"""Frozen MLP backbone with low-rank adapters on every weight matrix.

Each adapted layer computes ``z = h W^T + s * (h A^T) B^T + b`` where
``W`` is ``d x k``, ``A`` is ``r x k`` and ``B`` is ``d x r``. Hidden layers
use tanh; the last layer emits class logits.

Trainable adapter entries are handled as one flat float64 vector whose
ordering is fixed by :class:`Layout`: ``A_1, B_1, ..., A_L, B_L``, each
segment row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numeric import RngStream, matmul


@dataclass(frozen=True)
class Segment:
    layer: int
    matrix: str  # "A" or "B"
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def stop(self) -> int:
        return self.offset + self.size


@dataclass(frozen=True)
class Layout:
    """Maps ``(layer, matrix, row, col)`` to a flat index and back."""

    segments: tuple[Segment, ...]

    @classmethod
    def for_shapes(cls, shapes: Sequence[tuple[int, int]], rank: int) -> "Layout":
        segs = []
        offset = 0
        for layer, (d, k) in enumerate(shapes):
            for name, rows, cols in (("A", rank, k), ("B", d, rank)):
                segs.append(Segment(layer, name, rows, cols, offset))
                offset += rows * cols
        return cls(tuple(segs))

    @property
    def size(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    @property
    def n_layers(self) -> int:
        return len(self.segments) // 2

    @property
    def rank(self) -> int:
        return self.segments[0].rows

    def segment(self, layer: int, matrix: str) -> Segment:
        seg = self.segments[2 * layer + (0 if matrix == "A" else 1)]
        assert seg.layer == layer and seg.matrix == matrix
        return seg

    def index(self, layer: int, matrix: str, row: int, col: int) -> int:
        seg = self.segment(layer, matrix)
        if not (0 <= row < seg.rows and 0 <= col < seg.cols):
            raise IndexError(f"({row}, {col}) outside {matrix}_{layer} of shape {seg.rows}x{seg.cols}")
        return seg.offset + row * seg.cols + col

    def locate(self, flat_index: int) -> tuple[int, str, int, int]:
        if not 0 <= flat_index < self.size:
            raise IndexError(flat_index)
        for seg in self.segments:
            if flat_index < seg.stop:
                row, col = divmod(flat_index - seg.offset, seg.cols)
                return seg.layer, seg.matrix, row, col
        raise AssertionError("unreachable")

    def views(self, values: np.ndarray) -> list[np.ndarray]:
        """Reshaped views (no copies) of ``values``, one per segment."""
        return [values[s.offset : s.stop].reshape(s.rows, s.cols) for s in self.segments]

    def matrix_mask(self, matrix: str) -> np.ndarray:
        bits = np.zeros(self.size, dtype=bool)
        for s in self.segments:
            if s.matrix == matrix:
                bits[s.offset : s.stop] = True
        return bits


@dataclass
class FlatParams:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise ValueError(f"values length {self.values.shape} does not match layout size {self.layout.size}")

    def copy(self) -> "FlatParams":
        return FlatParams(self.values.copy(), self.layout)


@dataclass(frozen=True)
class Backbone:
    """Frozen dense network. ``weights[l]`` is ``d_l x k_l``."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: bad shapes W{w.shape} b{b.shape}")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l} input {w.shape[1]} != previous output {self.weights[l - 1].shape[0]}")
        for arr in (*self.weights, *self.biases):
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, weights, biases) -> "Backbone":
        return cls(
            tuple(np.array(w, dtype=np.float64) for w in weights),
            tuple(np.array(b, dtype=np.float64) for b in biases),
        )

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def max_rank(self) -> int:
        return min(max(d, k) for d, k in self.shapes)


def default_shapes(in_dim: int = 32, hidden: Sequence[int] = (64, 64), n_classes: int = 10) -> list[tuple[int, int]]:
    dims = [in_dim, *hidden, n_classes]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class LoraAdapter:
    A: list[np.ndarray]
    B: list[np.ndarray]
    scaling: float = 1.0

    @property
    def rank(self) -> int:
        return self.A[0].shape[0]

    @property
    def layout(self) -> Layout:
        return Layout.for_shapes([(b.shape[0], a.shape[1]) for a, b in zip(self.A, self.B)], self.rank)

    def flatten(self) -> FlatParams:
        parts = []
        for a, b in zip(self.A, self.B):
            parts.append(a.ravel())
            parts.append(b.ravel())
        return FlatParams(np.concatenate(parts), self.layout)

    @classmethod
    def from_flat(cls, params: FlatParams, scaling: float = 1.0) -> "LoraAdapter":
        views = params.layout.views(params.values)
        return cls(list(views[0::2]), list(views[1::2]), scaling)


def init_lora(backbone: Backbone, rank: int, init_std: float, stream: RngStream, scaling: float = 1.0) -> LoraAdapter:
    """Gaussian ``A``, zero ``B``: the adapted model starts equal to the backbone.

    ``rank`` may exceed ``min(d, k)`` of a narrow layer (a rank-16 adapter on
    the 10-class head is fine) but not ``max(d, k)`` of any layer.
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if rank > backbone.max_rank():
        raise ValueError(f"rank {rank} exceeds layer dimension bound {backbone.max_rank()}")
    rng = stream.generator()
    A, B = [], []
    for d, k in backbone.shapes:
        A.append(rng.standard_normal((rank, k)) * init_std)
        B.append(np.zeros((d, rank)))
    return LoraAdapter(A, B, scaling)


def _check_batch(backbone: Backbone, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != backbone.in_dim:
        raise ValueError(f"batch shape {x.shape} does not match input dim {backbone.in_dim}")
    return x


def _forward_cache(backbone: Backbone, adapter: LoraAdapter | None, x: np.ndarray):
    """Run the network and keep what backward needs."""
    h = x
    cache = []
    n_layers = len(backbone.weights)
    for l, (w, b) in enumerate(zip(backbone.weights, backbone.biases)):
        z = matmul(h, w.T)
        u = None
        if adapter is not None:
            u = matmul(h, adapter.A[l].T)
            z = z + adapter.scaling * matmul(u, adapter.B[l].T)
        z = z + b
        out = np.tanh(z) if l < n_layers - 1 else z
        cache.append((h, u))
        h = out
    return h, cache


def softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    logp = shifted - np.log(exp.sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(len(y)), y]))
    return loss, probs


def forward(backbone: Backbone, adapter: LoraAdapter | None, x, y=None):
    """Return ``(logits, mean cross-entropy)``; the loss is None without labels."""
    x = _check_batch(backbone, x)
    logits, _ = _forward_cache(backbone, adapter, x)
    if y is None:
        return logits, None
    loss, _ = softmax_xent(logits, np.asarray(y))
    return logits, loss


def backward(backbone: Backbone, adapter: LoraAdapter, x, y) -> FlatParams:
    """Gradient of the mean cross-entropy over adapter entries only."""
    x = _check_batch(backbone, x)
    y = np.asarray(y)
    logits, cache = _forward_cache(backbone, adapter, x)
    _, probs = softmax_xent(logits, y)
    dz = probs
    dz[np.arange(len(y)), y] -= 1.0
    dz /= len(y)

    s = adapter.scaling
    grads_A: list[np.ndarray] = [None] * len(cache)
    grads_B: list[np.ndarray] = [None] * len(cache)
    for l in range(len(cache) - 1, -1, -1):
        h, u = cache[l]
        w = backbone.weights[l]
        grads_B[l] = s * matmul(dz.T, u)
        du = s * matmul(dz, adapter.B[l])
        grads_A[l] = matmul(du.T, h)
        if l:
            dh = matmul(dz, w) + matmul(du, adapter.A[l])
            dz = dh * (1.0 - h * h)
    parts = []
    for ga, gb in zip(grads_A, grads_B):
        parts.append(ga.ravel())
        parts.append(gb.ravel())
    return FlatParams(np.concatenate(parts), adapter.layout)


def merge(backbone: Backbone, adapter: LoraAdapter) -> Backbone:
    weights = tuple(
        w + adapter.scaling * matmul(b, a) for w, a, b in zip(backbone.weights, adapter.A, adapter.B)
    )
    return Backbone(weights, tuple(b.copy() for b in backbone.biases))


@dataclass(frozen=True)
class LocalTrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 1

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("local lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


def local_train(
    backbone: Backbone,
    params: FlatParams,
    x,
    y,
    cfg: LocalTrainConfig,
    stream: RngStream,
    grad_mask: np.ndarray | None = None,
    scaling: float = 1.0,
) -> FlatParams:
    """Mini-batch SGD with heavy-ball momentum over the adapter entries.

    The example order is reshuffled every epoch from ``stream``. With
    ``grad_mask`` the gradient is zeroed outside the mask at every step, so
    those coordinates come back bit-identical.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("local_train: empty client dataset")
    p = params.values.copy()
    velocity = np.zeros_like(p)
    layout = params.layout
    rng = stream.generator()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            adapter = LoraAdapter.from_flat(FlatParams(p, layout), scaling)
            g = backward(backbone, adapter, x[idx], y[idx]).values
            if grad_mask is not None:
                g = np.where(grad_mask, g, 0.0)
            velocity = cfg.momentum * velocity + g
            p = p - cfg.lr * velocity
    return FlatParams(p, layout)


def local_train_masked(backbone, params, x, y, cfg, stream, grad_mask, scaling: float = 1.0) -> FlatParams:
    bits = getattr(grad_mask, "bits", grad_mask)
    return local_train(backbone, params, x, y, cfg, stream, grad_mask=bits, scaling=scaling)
