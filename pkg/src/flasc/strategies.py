"""Round protocols: what each client downloads, trains and uploads.

Every protocol shares the same per-client randomness (the local-training
stream is keyed on round and client id only), so protocols that degenerate
to dense LoRA reproduce it bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fed import ClientUpdate, Federation, ServerState
from .lora import FlatParams, Layout, local_train
from .numeric import RngStream
from .sparsity import GLOBAL, Mask, apply_mask, bitmap_size, keep_count, topk_mask, topk_within

DENSE = "dense"
FLASC = "flasc"
SPARSEADAPTER = "sparseadapter"
ADAPTER_LTH = "adapter_lth"
FEDSELECT = "fedselect"
HETLORA = "hetlora"
FFA = "ffa"
KINDS = (DENSE, FLASC, SPARSEADAPTER, ADAPTER_LTH, FEDSELECT, HETLORA, FFA)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = DENSE
    d_down: float = 1.0
    d_up: float = 1.0
    scope: str = GLOBAL
    lth_keep: float = 0.98
    lth_period: int = 1
    budget_tiers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"strategy must be one of {', '.join(KINDS)}; got {self.kind!r}")
        for name in ("d_down", "d_up"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"density.{name[2:]} must be in (0, 1]")
        if not 0 < self.lth_keep < 1:
            raise ValueError("lth.keep must be in (0, 1)")
        if self.lth_period < 1:
            raise ValueError("lth.period must be >= 1")
        if self.budget_tiers < 1:
            raise ValueError("budget.tiers must be >= 1")


def _sizes(mask: Mask) -> tuple[int, int]:
    return mask.nnz, bitmap_size(mask.size, mask.nnz)


def _make_update(cid, delta: FlatParams, up_mask: Mask, n_examples: int, down_mask: Mask) -> ClientUpdate:
    up, up_b = _sizes(up_mask)
    down, down_b = _sizes(down_mask)
    return ClientUpdate(cid, delta, up_mask, n_examples, up, down, up_b, down_b)


def _train(fed: Federation, cid: int, round_idx: int, start: FlatParams, grad_mask=None) -> tuple[FlatParams, int]:
    data = fed.client_data(cid)
    trained = local_train(
        fed.backbone, start, data.x, data.y, fed.local, fed.stream("local", round_idx, cid), grad_mask, fed.scaling
    )
    return trained, len(data)


class Strategy:
    """Dense LoRA: full download, dense local training, full upload."""

    name = DENSE

    def __init__(self, cfg: StrategyConfig | None = None):
        self.cfg = cfg or StrategyConfig(kind=self.name)

    def setup(self, state: ServerState, fed: Federation) -> ServerState:
        return state

    def client_updates(self, state: ServerState, fed: Federation, ids, round_idx: int) -> list[ClientUpdate]:
        full = Mask.ones(state.layout)
        out = []
        for cid in ids:
            trained, n = _train(fed, cid, round_idx, state.params)
            delta = FlatParams(state.params.values - trained.values, state.layout)
            out.append(_make_update(cid, delta, full, n, full))
        return out

    def update_bits(self, state: ServerState) -> np.ndarray | None:
        return None

    def eval_params(self, state: ServerState) -> FlatParams:
        """The adapter a client would receive for inference."""
        return state.params

    def end_round(self, state: ServerState, fed: Federation, round_idx: int) -> ServerState:
        return state


class Flasc(Strategy):
    """Sparse download of the top ``d_down`` server entries, dense local
    training of every entry, then an independent top ``d_up`` mask on each
    client's delta. With ``budget_tiers > 1`` both densities are further
    scaled by ``(1/4)**(tiers - tier)`` per client.
    """

    name = FLASC

    def __init__(self, cfg=None):
        super().__init__(cfg)
        self.budgets: np.ndarray | None = None

    def setup(self, state, fed):
        if self.cfg.budget_tiers > 1:
            self.budgets = assign_budgets(fed.n_clients, self.cfg.budget_tiers, fed.stream("budgets"))
        return state

    def eval_params(self, state):
        return apply_mask(state.params, topk_mask(state.params, self.cfg.d_down, self.cfg.scope))

    def densities(self, cid: int) -> tuple[float, float]:
        if self.budgets is None:
            return self.cfg.d_down, self.cfg.d_up
        scale = 0.25 ** (self.cfg.budget_tiers - int(self.budgets[cid]))
        return self.cfg.d_down * scale, self.cfg.d_up * scale

    def client_updates(self, state, fed, ids, round_idx):
        down_masks: dict[float, Mask] = {}
        out = []
        for cid in ids:
            d_down, d_up = self.densities(cid)
            if d_down not in down_masks:
                down_masks[d_down] = topk_mask(state.params, d_down, self.cfg.scope)
            m_down = down_masks[d_down]
            start = apply_mask(state.params, m_down)
            trained, n = _train(fed, cid, round_idx, start)
            delta = FlatParams(start.values - trained.values, state.layout)
            m_up = topk_mask(delta, d_up, self.cfg.scope)
            out.append(_make_update(cid, apply_mask(delta, m_up), m_up, n, m_down))
        return out


def _masked_updates(state: ServerState, fed: Federation, ids, round_idx: int, mask: Mask) -> list[ClientUpdate]:
    """Clients download and train only ``mask``; the upload reuses ``mask``."""
    start = apply_mask(state.params, mask)
    out = []
    for cid in ids:
        trained, n = _train(fed, cid, round_idx, start, grad_mask=mask.bits)
        delta = apply_mask(FlatParams(start.values - trained.values, state.layout), mask)
        out.append(_make_update(cid, delta, mask, n, mask))
    return out


class SparseAdapter(Strategy):
    """One dense warm-up round, then magnitude-prune the aggregate to density
    ``d_down`` and train only the survivors for the rest of the run."""

    name = SPARSEADAPTER

    def client_updates(self, state, fed, ids, round_idx):
        return _masked_updates(state, fed, ids, round_idx, state.trainable())

    def end_round(self, state, fed, round_idx):
        if round_idx == 0:
            keep = topk_mask(state.params, self.cfg.d_down, self.cfg.scope)
            state = state.freeze(~keep)
        return state


class AdapterLTH(Strategy):
    """Iterative magnitude pruning without rewinding: every ``lth_period``
    rounds keep the top ``lth_keep`` fraction of still-trainable entries."""

    name = ADAPTER_LTH

    def client_updates(self, state, fed, ids, round_idx):
        return _masked_updates(state, fed, ids, round_idx, state.trainable())

    def end_round(self, state, fed, round_idx):
        if (round_idx + 1) % self.cfg.lth_period:
            return state
        trainable = state.trainable()
        keep = topk_within(state.params, trainable, keep_count(self.cfg.lth_keep, trainable.nnz))
        return state.freeze(~keep)


def lth_trajectory(n: int, keep: float, events: int) -> list[int]:
    """Trainable count after each prune event: ``n_{j+1} = ceil(keep * n_j)``."""
    out = [n]
    for _ in range(events):
        out.append(keep_count(keep, out[-1]))
    return out


class FederatedSelect(Strategy):
    """Per-round server top-``d_down`` selection; clients train only the
    selected entries, so the upload structure equals the download one."""

    name = FEDSELECT

    def eval_params(self, state):
        return apply_mask(state.params, topk_mask(state.params, self.cfg.d_down, self.cfg.scope))

    def client_updates(self, state, fed, ids, round_idx):
        mask = topk_mask(state.params, self.cfg.d_down, self.cfg.scope)
        return _masked_updates(state, fed, ids, round_idx, mask)


def assign_budgets(n_clients: int, tiers: int, stream: RngStream) -> np.ndarray:
    """Uniform i.i.d. budget tier in ``1..tiers`` for every client."""
    if tiers < 1:
        raise ValueError("budget tiers must be >= 1")
    return stream.generator().integers(1, tiers + 1, size=n_clients)


def tier_rank(global_rank: int, tiers: int, tier: int) -> int:
    """Local rank ``global_rank / 4**(tiers - tier)``; top tier trains the full rank."""
    div = 4 ** (tiers - tier)
    if global_rank % div:
        raise ValueError(f"global rank {global_rank} is not divisible by {div} (tier {tier} of {tiers})")
    return global_rank // div


def slice_rank(params: FlatParams, rank: int) -> FlatParams:
    """Uppermost ``rank`` rows of every ``A`` and leftmost ``rank`` columns of every ``B``."""
    layout = params.layout
    views = layout.views(params.values)
    parts = []
    shapes = []
    for a, b in zip(views[0::2], views[1::2]):
        parts.append(a[:rank, :].ravel())
        parts.append(b[:, :rank].ravel())
        shapes.append((b.shape[0], a.shape[1]))
    return FlatParams(np.concatenate(parts), Layout.for_shapes(shapes, rank))


def pad_rank(small: FlatParams, layout: Layout) -> FlatParams:
    """Inverse of :func:`slice_rank`, zero elsewhere."""
    r = small.layout.rank
    out = np.zeros(layout.size)
    big = layout.views(out)
    src = small.layout.views(small.values)
    for l in range(layout.n_layers):
        big[2 * l][:r, :] = src[2 * l]
        big[2 * l + 1][:, :r] = src[2 * l + 1]
    return FlatParams(out, layout)


def rank_mask(layout: Layout, rank: int) -> Mask:
    bits = np.zeros(layout.size, dtype=bool)
    views = layout.views(bits)
    for l in range(layout.n_layers):
        views[2 * l][:rank, :] = True
        views[2 * l + 1][:, :rank] = True
    return Mask(bits, layout)


class HetLoRA(Strategy):
    """Clients of tier ``b`` train a rank ``r_s / 4**(b_s - b)`` slice of the
    global adapter; the server zero-pads slice deltas and averages over all
    sampled clients."""

    name = HETLORA

    def __init__(self, cfg=None):
        super().__init__(cfg)
        self.budgets: np.ndarray | None = None

    def setup(self, state, fed):
        self.budgets = assign_budgets(fed.n_clients, self.cfg.budget_tiers, fed.stream("budgets"))
        for tier in range(1, self.cfg.budget_tiers + 1):
            tier_rank(state.layout.rank, self.cfg.budget_tiers, tier)
        return state

    def client_rank(self, state: ServerState, cid: int) -> int:
        return tier_rank(state.layout.rank, self.cfg.budget_tiers, int(self.budgets[cid]))

    def client_updates(self, state, fed, ids, round_idx):
        out = []
        for cid in ids:
            r_c = self.client_rank(state, cid)
            start = slice_rank(state.params, r_c)
            trained, n = _train(fed, cid, round_idx, start)
            delta = pad_rank(FlatParams(start.values - trained.values, start.layout), state.layout)
            mask = rank_mask(state.layout, r_c)
            out.append(_make_update(cid, delta, mask, n, mask))
        return out


class FFALoRA(Strategy):
    """``A`` stays at its shared initialization; only ``B`` is trained and
    communicated. ``A`` is reproducible from the common seed so it is never
    charged as traffic."""

    name = FFA

    def _b_mask(self, state: ServerState) -> Mask:
        return Mask(state.layout.matrix_mask("B"), state.layout)

    def client_updates(self, state, fed, ids, round_idx):
        mask = self._b_mask(state)
        out = []
        for cid in ids:
            trained, n = _train(fed, cid, round_idx, state.params, grad_mask=mask.bits)
            delta = apply_mask(FlatParams(state.params.values - trained.values, state.layout), mask)
            out.append(_make_update(cid, delta, mask, n, mask))
        return out

    def update_bits(self, state):
        return state.layout.matrix_mask("B")


_REGISTRY = {
    cls.name: cls for cls in (Strategy, Flasc, SparseAdapter, AdapterLTH, FederatedSelect, HetLoRA, FFALoRA)
}


def make_strategy(cfg: StrategyConfig) -> Strategy:
    return _REGISTRY[cfg.kind](cfg)
