"""Synthetic transfer task, backbone pretraining, client partitioning and
communication accounting.

The source task is a mixture of Gaussian class clusters whose class means
live mostly in a low-dimensional informative subspace. The target task draws
from the same clusters after a fixed rotation of that subspace (plus an
optional offset), so a backbone pretrained on the source loses accuracy on
the target and a low-rank correction of the first layer can recover it.
"""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .lora import Backbone, default_shapes, forward, softmax_xent
from .numeric import RngStream, matmul


@dataclass(frozen=True)
class TaskSpec:
    dim: int = 32
    n_classes: int = 10
    informative: int = 8
    separation: float = 2.5
    noise: float = 1.0
    shift: float = 1.8
    offset: float = 0.0
    source_size: int = 20000
    train_size: int = 5000
    test_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("task.classes must be >= 2")
        if not 1 <= self.informative <= self.dim:
            raise ValueError("task.informative must be in [1, dim]")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class TaskPair:
    source: Dataset
    train: Dataset
    test: Dataset
    means: np.ndarray
    transform: np.ndarray
    offset: np.ndarray
    spec: TaskSpec

    @property
    def target_means(self) -> np.ndarray:
        return self.means @ self.transform.T + self.offset


def _rotation(spec: TaskSpec, rng: np.random.Generator) -> np.ndarray:
    q = np.eye(spec.dim)
    if spec.shift == 0:
        return q
    m = spec.informative
    g = rng.standard_normal((m, m))
    skew = (g - g.T) / 2
    skew /= np.linalg.norm(skew, 2)
    q[:m, :m] = expm(spec.shift * skew)
    return q


def _draw(means, labels, noise, rng) -> np.ndarray:
    return means[labels] + noise * rng.standard_normal((len(labels), means.shape[1]))


def gen_task_pair(spec: TaskSpec = TaskSpec(), stream: RngStream | None = None) -> TaskPair:
    stream = stream or RngStream(spec.seed, ("task",))
    rng = stream.generator()
    means = np.zeros((spec.n_classes, spec.dim))
    means[:, : spec.informative] = spec.separation * rng.standard_normal((spec.n_classes, spec.informative))
    transform = _rotation(spec, rng)
    offset = np.zeros(spec.dim)
    if spec.offset:
        direction = rng.standard_normal(spec.dim)
        offset = spec.offset * direction / np.linalg.norm(direction)

    def sample(n, moved):
        y = rng.integers(0, spec.n_classes, size=n)
        x = _draw(means, y, spec.noise, rng)
        if moved:
            x = x @ transform.T + offset
        return Dataset(x, y)

    source = sample(spec.source_size, False)
    train = sample(spec.train_size, True)
    test = sample(spec.test_size, True)
    return TaskPair(source, train, test, means, transform, offset, spec)


def fit_linear_classifier(data: Dataset, n_classes: int, ridge: float = 1e-3):
    """Least-squares one-vs-rest linear classifier; returns a predict function."""
    xb = np.hstack([data.x, np.ones((len(data), 1))])
    targets = np.eye(n_classes)[data.y]
    w = np.linalg.solve(xb.T @ xb + ridge * np.eye(xb.shape[1]), xb.T @ targets)
    return lambda x: np.argmax(np.hstack([x, np.ones((len(x), 1))]) @ w, axis=1)


@dataclass(frozen=True)
class PretrainConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 30
    target_accuracy: float = 0.9
    stop_accuracy: float = 0.97


class PretrainError(RuntimeError):
    pass


def backbone_accuracy(backbone: Backbone, data: Dataset) -> float:
    logits, _ = forward(backbone, None, data.x)
    return float(np.mean(np.argmax(logits, axis=1) == data.y))


def pretrain_backbone(source: Dataset, n_classes: int, stream: RngStream, cfg: PretrainConfig = PretrainConfig()) -> Backbone:
    """Centralized momentum SGD on the source task, weights and biases.

    Stops once source accuracy reaches ``cfg.stop_accuracy``; raises
    :class:`PretrainError` if ``cfg.target_accuracy`` is not reached within
    ``cfg.max_epochs``.
    """
    rng = stream.generator()
    shapes = default_shapes(source.x.shape[1], cfg.hidden, n_classes)
    ws = [rng.standard_normal((d, k)) / np.sqrt(k) for d, k in shapes]
    bs = [np.zeros(d) for d, _ in shapes]
    vel_w = [np.zeros_like(w) for w in ws]
    vel_b = [np.zeros_like(b) for b in bs]
    n = len(source)
    acc = 0.0
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            gw, gb = _full_grad(ws, bs, source.x[idx], source.y[idx])
            for l in range(len(ws)):
                vel_w[l] = cfg.momentum * vel_w[l] + gw[l]
                vel_b[l] = cfg.momentum * vel_b[l] + gb[l]
                ws[l] = ws[l] - cfg.lr * vel_w[l]
                bs[l] = bs[l] - cfg.lr * vel_b[l]
        acc = backbone_accuracy(Backbone.from_arrays(ws, bs), source)
        if acc >= cfg.stop_accuracy:
            break
    if acc < cfg.target_accuracy:
        raise PretrainError(f"pretraining reached {acc:.3f} source accuracy < {cfg.target_accuracy}")
    return Backbone.from_arrays(ws, bs)


def _full_grad(ws, bs, x, y):
    acts = [x]
    h = x
    for l, (w, b) in enumerate(zip(ws, bs)):
        z = matmul(h, w.T) + b
        h = np.tanh(z) if l < len(ws) - 1 else z
        acts.append(h)
    _, probs = softmax_xent(h, y)
    dz = probs
    dz[np.arange(len(y)), y] -= 1.0
    dz /= len(y)
    gw = [None] * len(ws)
    gb = [None] * len(ws)
    for l in range(len(ws) - 1, -1, -1):
        gw[l] = matmul(dz.T, acts[l])
        gb[l] = dz.sum(axis=0)
        if l:
            dz = matmul(dz, ws[l]) * (1.0 - acts[l] ** 2)
    return gw, gb


@functools.lru_cache(maxsize=8)
def pretrained_task(spec: TaskSpec, pretrain: PretrainConfig = PretrainConfig()) -> tuple[TaskPair, Backbone]:
    """Task pair and frozen backbone for ``spec`` (memoized per process)."""
    task = gen_task_pair(spec)
    backbone = pretrain_backbone(task.source, spec.n_classes, RngStream(spec.seed, ("pretrain",)), pretrain)
    return task, backbone


# --- client partitioning ---------------------------------------------------


def dirichlet_partition(labels, n_clients: int, alpha: float, stream: RngStream) -> list[np.ndarray]:
    """Label-skewed split: each client draws class proportions from Dir(alpha).

    Every example of class ``c`` goes to a client drawn from column ``c`` of
    the client-by-class proportion matrix, normalized over clients. Empty
    clients then take one example from the currently largest client.
    """
    labels = np.asarray(labels)
    if alpha <= 0:
        raise ValueError("partition.alpha must be > 0")
    if n_clients < 1:
        raise ValueError("partition.clients must be >= 1")
    if n_clients > len(labels):
        raise ValueError(f"{n_clients} clients but only {len(labels)} examples")
    rng = stream.generator()
    classes = np.unique(labels)
    props = rng.dirichlet(np.full(len(classes), alpha), size=n_clients)
    owner = np.empty(len(labels), dtype=np.int64)
    for j, c in enumerate(classes):
        members = np.flatnonzero(labels == c)
        col = props[:, j]
        total = col.sum()
        col = col / total if total > 0 else np.full(n_clients, 1.0 / n_clients)
        owner[members] = rng.choice(n_clients, size=len(members), p=col)
    clients = [list(np.flatnonzero(owner == i)) for i in range(n_clients)]
    for i in range(n_clients):
        if not clients[i]:
            donor = max(range(n_clients), key=lambda j: (len(clients[j]), -j))
            clients[i].append(clients[donor].pop())
    return [np.array(sorted(c), dtype=np.int64) for c in clients]


def max_label_share(labels, partition: Sequence[np.ndarray]) -> np.ndarray:
    labels = np.asarray(labels)
    return np.array([np.bincount(labels[idx]).max() / len(idx) for idx in partition])


# --- text serialization ----------------------------------------------------


def dataset_to_csv(data: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(data.x.shape[1])] + ["label"])
    for row, label in zip(data.x, data.y):
        w.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    body = rows[1:]
    x = np.array([[float(v) for v in r[:-1]] for r in body])
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return Dataset(x, y)


def partition_to_text(partition: Sequence[np.ndarray]) -> str:
    return "".join(f"{cid}: {' '.join(str(int(i)) for i in idx)}\n" for cid, idx in enumerate(partition))


def partition_from_text(text: str) -> list[np.ndarray]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        cid, _, rest = line.partition(":")
        if int(cid) != len(out):
            raise ValueError(f"partition lines out of order at client {cid}")
        out.append(np.array([int(t) for t in rest.split()], dtype=np.int64))
    return out


# --- communication accounting -------------------------------------------


@dataclass
class CommLedger:
    down: list[int] = field(default_factory=list)
    up: list[int] = field(default_factory=list)
    down_bytes: list[int] = field(default_factory=list)
    up_bytes: list[int] = field(default_factory=list)

    def record(self, down_params: int, up_params: int, down_bytes: int = 0, up_bytes: int = 0) -> "CommLedger":
        if min(down_params, up_params, down_bytes, up_bytes) < 0:
            raise ValueError("communication counts must be non-negative")
        self.down.append(int(down_params))
        self.up.append(int(up_params))
        self.down_bytes.append(int(down_bytes))
        self.up_bytes.append(int(up_bytes))
        return self

    def __len__(self) -> int:
        return len(self.down)

    @property
    def down_cum(self) -> list[int]:
        return np.cumsum([0] + self.down)[1:].tolist()

    @property
    def up_cum(self) -> list[int]:
        return np.cumsum([0] + self.up)[1:].tolist()

    @property
    def total_down(self) -> int:
        return sum(self.down)

    @property
    def total_up(self) -> int:
        return sum(self.up)


def ledger_record(ledger: CommLedger, down_params: int, up_params: int, down_bytes: int = 0, up_bytes: int = 0) -> CommLedger:
    return ledger.record(down_params, up_params, down_bytes, up_bytes)


@dataclass(frozen=True)
class BandwidthModel:
    down: float = 1.0
    upload_ratio: float = 1.0

    def __post_init__(self):
        if self.down <= 0 or self.upload_ratio <= 0:
            raise ValueError("bandwidths must be positive")

    @property
    def up(self) -> float:
        return self.down * self.upload_ratio


def round_time(down_params: float, up_params: float, bw: BandwidthModel) -> float:
    return down_params / bw.down + up_params / bw.up


def comm_time(ledger: CommLedger, bw: BandwidthModel, upto: int | None = None) -> float:
    """Modeled transfer time of the first ``upto`` rounds (all by default).

    Download and upload are charged sequentially, never overlapped.
    """
    rounds = len(ledger) if upto is None else upto
    return sum(round_time(d, u, bw) for d, u in zip(ledger.down[:rounds], ledger.up[:rounds]))
