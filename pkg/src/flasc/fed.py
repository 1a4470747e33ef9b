"""Server state, client sampling, aggregation, FedAdam and the round loop."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .data import CommLedger, Dataset
from .lora import Backbone, FlatParams, LocalTrainConfig, LoraAdapter, forward, softmax_xent
from .numeric import RngStream
from .privacy import DpConfig, dp_aggregate
from .sparsity import Mask, SizeModel

if TYPE_CHECKING:
    from .strategies import Strategy

UNIFORM = "uniform"
BY_EXAMPLES = "by-example-count"


@dataclass(frozen=True)
class FedOptConfig:
    server_lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weighting: str = UNIFORM
    bias_correction: bool = True

    def __post_init__(self):
        if not self.server_lr > 0:
            raise ValueError("server.lr must be > 0")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"server.{name} must be in [0, 1)")
        if self.weighting not in (UNIFORM, BY_EXAMPLES):
            raise ValueError(f"server.weighting must be {UNIFORM!r} or {BY_EXAMPLES!r}")


@dataclass
class ServerState:
    """Global adapter plus dense Adam moments.

    ``frozen`` marks coordinates that were zeroed and frozen by pruning; they
    stay exactly zero in ``params``, ``adam_m`` and ``adam_v``.
    """

    params: FlatParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    step_count: int = 0
    frozen: Mask | None = None

    @classmethod
    def fresh(cls, params: FlatParams) -> "ServerState":
        n = params.layout.size
        return cls(params.copy(), np.zeros(n), np.zeros(n))

    @property
    def layout(self):
        return self.params.layout

    def trainable(self) -> Mask:
        return Mask.ones(self.layout) if self.frozen is None else ~self.frozen

    def freeze(self, frozen: Mask) -> "ServerState":
        """Zero-and-freeze everything in ``frozen`` (the set only grows)."""
        if self.frozen is not None:
            frozen = Mask(frozen.bits | self.frozen.bits, self.layout)
        keep = ~frozen.bits
        return ServerState(
            FlatParams(np.where(keep, self.params.values, 0.0), self.layout),
            np.where(keep, self.adam_m, 0.0),
            np.where(keep, self.adam_v, 0.0),
            self.step_count,
            frozen,
        )


@dataclass
class ClientUpdate:
    client_id: int
    delta: FlatParams
    upload_mask: Mask
    example_count: int
    up_size: int
    down_size: int
    up_bytes: int = 0
    down_bytes: int = 0


def sample_clients(pool: Sequence[int], n: int, stream: RngStream) -> list[int]:
    """``n`` distinct ids, uniformly without replacement, in ascending order."""
    pool = list(pool)
    if n > len(pool):
        raise ValueError(f"cannot sample {n} clients from a pool of {len(pool)}")
    if n < 1:
        raise ValueError("must sample at least one client")
    picked = stream.generator().choice(len(pool), size=n, replace=False)
    return sorted(pool[i] for i in picked)


def _two_sum(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def aggregate(updates: Sequence[ClientUpdate], weighting: str = UNIFORM) -> np.ndarray:
    """Mean client delta, reduced in ascending client-id order.

    The uniform mean carries the running sum as a compensated ``hi + lo``
    pair, so ``k`` identical deltas average back to exactly that delta.
    """
    if not updates:
        raise ValueError("aggregate: no updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if weighting == UNIFORM:
        hi = ordered[0].delta.values.copy()
        lo = np.zeros_like(hi)
        for u in ordered[1:]:
            hi, err = _two_sum(hi, u.delta.values)
            lo = lo + err
        n = len(ordered)
        return hi / n + lo / n
    if weighting == BY_EXAMPLES:
        n_total = sum(u.example_count for u in ordered)
        total = (ordered[0].example_count / n_total) * ordered[0].delta.values
        for u in ordered[1:]:
            total = total + (u.example_count / n_total) * u.delta.values
        return total
    raise ValueError(f"unknown weighting {weighting!r}")


def fedadam_step(state: ServerState, pseudo_grad, cfg: FedOptConfig, update_bits: np.ndarray | None = None) -> ServerState:
    """One server Adam step on the pseudo-gradient.

    Coordinates outside ``update_bits`` (and all frozen coordinates) keep
    their params and moments unchanged.
    """
    g = np.asarray(pseudo_grad, dtype=np.float64)
    if g.shape != (state.layout.size,):
        raise ValueError("pseudo-gradient does not match the server layout")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite pseudo-gradient")
    bits = state.trainable().bits
    if update_bits is not None:
        bits = bits & update_bits
    g = np.where(bits, g, 0.0)
    m = np.where(bits, cfg.beta1 * state.adam_m + (1 - cfg.beta1) * g, state.adam_m)
    v = np.where(bits, cfg.beta2 * state.adam_v + (1 - cfg.beta2) * g * g, state.adam_v)
    t = state.step_count + 1
    if cfg.bias_correction:
        m_hat = m / (1 - cfg.beta1**t)
        v_hat = v / (1 - cfg.beta2**t)
    else:
        m_hat, v_hat = m, v
    step = cfg.server_lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    p = np.where(bits, state.params.values - step, state.params.values)
    return ServerState(FlatParams(p, state.layout), m, v, t, state.frozen)


def evaluate(backbone: Backbone, params: FlatParams, data: Dataset, scaling: float = 1.0) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy of the adapted model."""
    if len(data) == 0:
        raise ValueError("evaluate: empty test set")
    logits, _ = forward(backbone, LoraAdapter.from_flat(params, scaling), data.x)
    loss, _ = softmax_xent(logits, data.y)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.y))
    return acc, loss


@dataclass
class Federation:
    """Everything a round needs besides the server state and the protocol."""

    backbone: Backbone
    train: Dataset
    test: Dataset
    partition: list[np.ndarray]
    local: LocalTrainConfig
    fedopt: FedOptConfig
    clients_per_round: int
    seed: int
    scaling: float = 1.0
    size_model: SizeModel = field(default_factory=SizeModel)
    dp: DpConfig | None = None

    @property
    def n_clients(self) -> int:
        return len(self.partition)

    def client_data(self, cid: int) -> Dataset:
        return self.train.subset(self.partition[cid])

    def stream(self, *label) -> RngStream:
        return RngStream(self.seed, tuple(label))


@dataclass
class RoundMetrics:
    round: int
    clients: list[int]
    down_params: int
    up_params: int
    down_bytes: int
    up_bytes: int
    accuracy: float | None = None
    loss: float | None = None
    dense_accuracy: float | None = None


def run_round(
    strategy: "Strategy",
    state: ServerState,
    fed: Federation,
    round_idx: int,
    ledger: CommLedger | None = None,
    do_eval: bool = True,
) -> tuple[ServerState, RoundMetrics]:
    ids = sample_clients(range(fed.n_clients), fed.clients_per_round, fed.stream("sample", round_idx))
    updates = strategy.client_updates(state, fed, ids, round_idx)
    if fed.dp is not None:
        ordered = sorted(updates, key=lambda u: u.client_id)
        g = dp_aggregate([u.delta.values for u in ordered], fed.dp, fed.stream("dp", round_idx))
    else:
        g = aggregate(updates, fed.fedopt.weighting)
    state = fedadam_step(state, g, fed.fedopt, strategy.update_bits(state))
    state = strategy.end_round(state, fed, round_idx)

    metrics = RoundMetrics(
        round=round_idx + 1,
        clients=ids,
        down_params=sum(u.down_size for u in updates),
        up_params=sum(u.up_size for u in updates),
        down_bytes=sum(u.down_bytes for u in updates),
        up_bytes=sum(u.up_bytes for u in updates),
    )
    if ledger is not None:
        ledger.record(metrics.down_params, metrics.up_params, metrics.down_bytes, metrics.up_bytes)
    if do_eval:
        deployed = strategy.eval_params(state)
        metrics.accuracy, metrics.loss = evaluate(fed.backbone, deployed, fed.test, fed.scaling)
        if deployed is state.params:
            metrics.dense_accuracy = metrics.accuracy
        else:
            metrics.dense_accuracy = evaluate(fed.backbone, state.params, fed.test, fed.scaling)[0]
    return state, metrics


def with_params(state: ServerState, values: np.ndarray) -> ServerState:
    return replace(state, params=FlatParams(values, state.layout))
