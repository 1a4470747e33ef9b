"""Final accuracy of FLASC and the sparse baselines across densities."""

from common import base_parser, run_series, write_table

DENSITIES = (1 / 4, 1 / 16, 1 / 64)


def main():
    args = base_parser(__doc__).parse_args()
    out = args.out / "density_sweep"
    rows = []
    dense = run_series("dense", args.seeds, out, rounds=args.rounds, strategy="dense")
    rows.append(["dense", 1.0, f"{sum(r.final.accuracy for r in dense) / len(dense):.4f}"])
    for d in DENSITIES:
        for kind, kw in (
            ("flasc", dict(density_down=d, density_up=d)),
            ("sparseadapter", dict(density_down=d)),
            ("fedselect", dict(density_down=d)),
        ):
            res = run_series(f"{kind} d={d:g}", args.seeds, out, rounds=args.rounds, strategy=kind, **kw)
            rows.append([kind, f"{d:g}", f"{sum(r.final.accuracy for r in res) / len(res):.4f}"])
    write_table(out / "final_accuracy.csv", ["strategy", "density", "mean_final_accuracy"], rows)


if __name__ == "__main__":
    main()
