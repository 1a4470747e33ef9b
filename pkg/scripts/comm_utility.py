"""Accuracy against cumulative communication for dense LoRA, FLASC and the
pruning baselines at density 1/4."""

from common import base_parser, mean_curve, run_series, write_table

SERIES = {
    "dense": dict(strategy="dense"),
    "flasc d=1/4": dict(strategy="flasc", density_down=0.25, density_up=0.25),
    "flasc d=1/16": dict(strategy="flasc", density_down=1 / 16, density_up=1 / 16),
    "sparseadapter d=1/4": dict(strategy="sparseadapter", density_down=0.25),
    "adapter_lth p=0.98": dict(strategy="adapter_lth", lth_keep=0.98),
}


def main():
    args = base_parser(__doc__).parse_args()
    out = args.out / "comm_utility"
    table = []
    for label, kw in SERIES.items():
        results = run_series(label, args.seeds, out, rounds=args.rounds, **kw)
        curve = mean_curve(results)
        for row, acc in zip(results[0].rows, curve):
            table.append([label, row.round, row.down_params_cum + row.up_params_cum, f"{acc:.4f}"])
    write_table(out / "curves.csv", ["series", "round", "total_params_cum", "mean_accuracy"], table)


if __name__ == "__main__":
    main()
