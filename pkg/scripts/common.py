"""Shared helpers for the experiment scripts."""

from __future__ import annotations

import argparse
import csv
import math
from pathlib import Path

import numpy as np

from flasc.config import ExperimentConfig
from flasc.data import BandwidthModel, comm_time
from flasc.runner import RunResult, metrics_csv, run_experiment


def base_parser(description: str, rounds: int = 100) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--rounds", type=int, default=rounds)
    p.add_argument("--out", type=Path, default=Path("runs"))
    return p


_started: set[Path] = set()


def run_series(label: str, seeds, out: Path, **kw) -> list[RunResult]:
    results = []
    for seed in seeds:
        res = run_experiment(ExperimentConfig(seed=seed, **kw), write=False)
        results.append(res)
        print(f"{label:32s} seed={seed} final accuracy {res.final.accuracy:.4f}", flush=True)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "metrics.csv"
    mode = "a" if path in _started else "w"
    _started.add(path)
    with open(path, mode) as fh:
        for res in results:
            fh.write(metrics_csv(res.config, res.rows, label))
    return results


def mean_curve(results: list[RunResult]) -> np.ndarray:
    return np.mean([[r.accuracy for r in res.rows] for res in results], axis=0)


def time_to_target(results: list[RunResult], target: float, bw: BandwidthModel) -> float:
    hits = np.flatnonzero(mean_curve(results) >= target)
    if hits.size == 0:
        return math.inf
    first = results[0]
    return comm_time(first.ledger, bw, upto=first.rows[hits[0]].round)


def write_table(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")
