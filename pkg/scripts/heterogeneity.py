"""Data heterogeneity: Dirichlet concentration against final accuracy, plus
systems heterogeneity with budget tiers (rank slicing against tiered density)."""

import numpy as np

from flasc.config import ExperimentConfig
from flasc.data import dirichlet_partition, max_label_share, pretrained_task
from flasc.numeric import RngStream

from common import base_parser, run_series, write_table

ALPHAS = (0.01, 0.1, 1.0, 100.0)


def main():
    p = base_parser(__doc__)
    p.add_argument("--tiers", type=int, default=3)
    args = p.parse_args()
    out = args.out / "heterogeneity"
    cfg = ExperimentConfig()
    task, _ = pretrained_task(cfg.task(), cfg.pretrain())
    rows = []
    for alpha in ALPHAS:
        share = np.mean([
            max_label_share(task.train.y, dirichlet_partition(task.train.y, cfg.partition_clients, alpha, RngStream(s, ("partition",)))).mean()
            for s in args.seeds
        ])
        for kind, kw in (("dense", {}), ("flasc", dict(density_down=0.25, density_up=0.25))):
            res = run_series(f"{kind} alpha={alpha:g}", args.seeds, out, rounds=args.rounds,
                             strategy=kind, partition_alpha=alpha, **kw)
            rows.append([kind, f"{alpha:g}", f"{share:.3f}", f"{np.mean([r.final.accuracy for r in res]):.4f}"])
    write_table(out / "alpha.csv", ["strategy", "alpha", "mean_max_label_share", "mean_final_accuracy"], rows)

    tiers = []
    for kind, kw in (
        ("hetlora", dict(budget_tiers=args.tiers)),
        ("flasc", dict(budget_tiers=args.tiers, density_down=1.0, density_up=1.0)),
    ):
        res = run_series(f"{kind} tiers={args.tiers}", args.seeds, out, rounds=args.rounds, strategy=kind, **kw)
        tiers.append([kind, args.tiers, f"{np.mean([r.final.accuracy for r in res]):.4f}",
                      res[0].final.up_params_cum])
    write_table(out / "tiers.csv", ["strategy", "tiers", "mean_final_accuracy", "up_params_cum"], tiers)


if __name__ == "__main__":
    main()
