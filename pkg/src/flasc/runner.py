"""Experiment execution, sweeps and plot-data export."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, emit_config, from_pairs, parse_pairs
from .data import CommLedger, comm_time, dirichlet_partition, pretrained_task
from .fed import Federation, ServerState, evaluate, run_round
from .lora import LoraAdapter, init_lora, merge
from .numeric import RngStream
from .strategies import make_strategy

log = logging.getLogger(__name__)

OUTPUT_ENV = "FLASC_OUTPUT_DIR"

METRIC_COLUMNS = (
    "round", "seed", "strategy", "accuracy", "loss",
    "down_params_cum", "up_params_cum", "time_units", "trainable", "dense_accuracy",
)


@dataclass
class MetricsRow:
    round: int
    seed: int
    strategy: str
    accuracy: float
    loss: float
    down_params_cum: int
    up_params_cum: int
    time_units: float
    trainable: int
    dense_accuracy: float
    wall_ms: float = 0.0

    def as_csv(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in METRIC_COLUMNS]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    state: ServerState
    ledger: CommLedger
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def final(self) -> MetricsRow:
        return self.rows[-1]

    def csv_text(self) -> str:
        return metrics_csv(self.config, self.rows)


def build(cfg: ExperimentConfig):
    """Task, backbone, partition, initial adapter and server state for ``cfg``."""
    task, backbone = pretrained_task(cfg.task(), cfg.pretrain())
    partition = dirichlet_partition(
        task.train.y, cfg.partition_clients, cfg.partition_alpha, RngStream(cfg.seed, ("partition",))
    )
    fed = Federation(
        backbone=backbone,
        train=task.train,
        test=task.test,
        partition=partition,
        local=cfg.local(),
        fedopt=cfg.fedopt(),
        clients_per_round=cfg.clients_per_round,
        seed=cfg.seed,
        scaling=cfg.lora_scaling,
        size_model=cfg.size_model(),
        dp=cfg.dp(),
    )
    adapter = init_lora(backbone, cfg.lora_rank, cfg.lora_init_std, RngStream(cfg.seed, ("lora-init",)), cfg.lora_scaling)
    state = ServerState.fresh(adapter.flatten())
    return task, fed, state


def _ledger_units(ledger: CommLedger, cfg: ExperimentConfig) -> CommLedger:
    if cfg.size_mode == "param-count":
        return ledger
    return CommLedger(ledger.down_bytes, ledger.up_bytes)


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None, write: bool = True) -> RunResult:
    """Run ``cfg.rounds`` rounds; optionally write metrics and final artifacts."""
    cfg.validate()
    task, fed, state = build(cfg)
    strategy = make_strategy(cfg.strategy_config())
    state = strategy.setup(state, fed)
    ledger = CommLedger()
    bw = cfg.bandwidth()

    def row(round_no: int, acc: float, loss: float, dense_acc: float, wall_ms: float) -> MetricsRow:
        units = _ledger_units(ledger, cfg)
        return MetricsRow(
            round=round_no, seed=cfg.seed, strategy=cfg.strategy, accuracy=acc, loss=loss,
            down_params_cum=ledger.total_down, up_params_cum=ledger.total_up,
            time_units=comm_time(units, bw), trainable=state.trainable().nnz,
            dense_accuracy=dense_acc, wall_ms=wall_ms,
        )

    acc, loss = evaluate(fed.backbone, strategy.eval_params(state), fed.test, fed.scaling)
    dense_acc = evaluate(fed.backbone, state.params, fed.test, fed.scaling)[0]
    rows = [row(0, acc, loss, dense_acc, 0.0)]
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        for r in range(cfg.rounds):
            t0 = time.perf_counter()
            last = r == cfg.rounds - 1
            do_eval = last or (r + 1) % cfg.eval_every == 0
            state, m = run_round(strategy, state, fed, r, ledger, do_eval=do_eval)
            wall = (time.perf_counter() - t0) * 1000
            if do_eval:
                rows.append(row(m.round, m.accuracy, m.loss, m.dense_accuracy, wall))
    result = RunResult(cfg, rows, state, ledger)
    if write:
        result.paths = write_run(result, out_dir)
    return result


def output_path(cfg: ExperimentConfig, out_dir=None) -> Path:
    name = Path(cfg.output).name if cfg.output else f"{cfg.strategy}-seed{cfg.seed}.csv"
    override = out_dir or os.environ.get(OUTPUT_ENV)
    if override:
        return Path(override) / name
    return Path(cfg.output) if cfg.output else Path("runs") / name


def metrics_csv(cfg: ExperimentConfig, rows: Sequence[MetricsRow], tags: str | None = None) -> str:
    buf = io.StringIO()
    for line in emit_config(cfg).splitlines():
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = list(METRIC_COLUMNS) + (["series"] if tags is not None else [])
    w.writerow(cols)
    for r in rows:
        w.writerow(r.as_csv() + ([tags] if tags is not None else []))
    return buf.getvalue()


def write_run(result: RunResult, out_dir=None) -> dict[str, Path]:
    path = output_path(result.config, out_dir)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.csv_text())
    stem = path.with_suffix("")
    timing = Path(f"{stem}.timing.csv")
    timing.write_text("round,wall_ms\n" + "".join(f"{r.round},{r.wall_ms:.3f}\n" for r in result.rows))

    params = result.state.params
    lines = ["index,layer,matrix,row,col,value"]
    for i, v in enumerate(params.values):
        layer, mat, row, col = params.layout.locate(i)
        lines.append(f"{i},{layer},{mat},{row},{col},{float(v)!r}")
    params_path = Path(f"{stem}.params.csv")
    params_path.write_text("\n".join(lines) + "\n")

    _, backbone = pretrained_task(result.config.task(), result.config.pretrain())
    merged = merge(backbone, LoraAdapter.from_flat(params, result.config.lora_scaling))
    merged_path = Path(f"{stem}.merged.npz")
    arrays = {f"W{l}": w for l, w in enumerate(merged.weights)}
    arrays.update({f"b{l}": b for l, b in enumerate(merged.biases)})
    np.savez(merged_path, **arrays)
    return {"metrics": path, "timing": timing, "params": params_path, "merged": merged_path}


# --- sweeps ------------------------------------------------------------------


@dataclass
class GridSpec:
    base: list[tuple[str, str]]
    axes: dict[str, list[str]]
    seeds: list[int]

    def points(self) -> list[dict[str, str]]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def parse_grid(text: str) -> GridSpec:
    """Base ``key=value`` lines plus ``grid.<key>=v1,v2`` axes and ``seeds=1,2,3``."""
    base, axes, seeds = [], {}, None
    for key, value in parse_pairs(text):
        if key.startswith("grid."):
            axes[key[5:]] = [v.strip() for v in value.split(";" if ";" in value else ",") if v.strip()]
        elif key == "seeds":
            seeds = [int(v) for v in value.split(",") if v.strip()]
        else:
            base.append((key, value))
    if seeds is None:
        seeds = [int(dict(base).get("seed", 0))]
    return GridSpec(base, axes, seeds)


def point_tags(point: dict[str, str]) -> str:
    return ";".join(f"{k}={v}" for k, v in point.items())


@dataclass
class SweepResult:
    runs: list[tuple[dict[str, str], RunResult]]
    failures: list[tuple[dict[str, str], int, str]]

    def csv_text(self) -> str:
        parts = [metrics_csv(run.config, run.rows, point_tags(point)) for point, run in self.runs]
        return "".join(parts)


def run_sweep(grid: GridSpec) -> SweepResult:
    """One run per grid point and seed. Every point uses the listed seeds, so
    points are compared on common random numbers."""
    runs, failures = [], []
    for point in grid.points():
        for seed in grid.seeds:
            pairs = [(k, v) for k, v in grid.base if k != "seed"] + list(point.items()) + [("seed", str(seed))]
            try:
                cfg = from_pairs(pairs)
                runs.append((point, run_experiment(cfg, write=False)))
            except (ConfigError, ValueError, FloatingPointError, RuntimeError) as e:
                log.warning("sweep point %s seed %s failed: %s", point, seed, e)
                failures.append((point, seed, str(e)))
    return SweepResult(runs, failures)


# --- plot data ---------------------------------------------------------------

X_AXES = ("round", "down_params_cum", "up_params_cum", "total_params_cum", "time_units")
Y_AXES = ("accuracy", "loss")


def read_metrics(text: str) -> list[dict[str, str]]:
    body = [line for line in text.splitlines() if line and not line.startswith("#")]
    rows = []
    header = None
    for rec in csv.reader(body):
        if rec and rec[0] == "round":
            header = rec
            continue
        rows.append(dict(zip(header, rec)))
    return rows


def _x_value(row: dict[str, str], axis: str) -> float:
    if axis == "total_params_cum":
        return float(row["down_params_cum"]) + float(row["up_params_cum"])
    return float(row[axis])


def emit_plotdata(rows: Iterable[dict[str, str]], x: str = "up_params_cum", y: str = "accuracy", bands: bool = False) -> str:
    """Long-form ``x,y,series,seed`` CSV, or ``x,series,min,mean,max`` with ``bands``."""
    if x not in X_AXES:
        raise ValueError(f"unknown x axis {x!r}; choose from {', '.join(X_AXES)}")
    if y not in Y_AXES:
        raise ValueError(f"unknown y axis {y!r}; choose from {', '.join(Y_AXES)}")
    rows = list(rows)
    if not rows:
        raise ValueError("no metrics rows")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    points = [(_x_value(r, x), float(r[y]), r.get("series") or r["strategy"], r["seed"]) for r in rows]
    if not bands:
        w.writerow(["x", "y", "series", "seed"])
        for px, py, s, seed in points:
            w.writerow([repr(px), repr(py), s, seed])
        return buf.getvalue()
    groups: dict[tuple[str, float], list[float]] = {}
    for px, py, s, _ in points:
        groups.setdefault((s, px), []).append(py)
    w.writerow(["x", "series", "min", "mean", "max", "n"])
    for (s, px), ys in sorted(groups.items()):
        w.writerow([repr(px), s, repr(min(ys)), repr(float(np.mean(ys))), repr(max(ys)), len(ys)])
    return buf.getvalue()
