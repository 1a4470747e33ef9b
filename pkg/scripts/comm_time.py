"""Modeled communication time to reach 70% of dense LoRA's final accuracy
for several upload/download bandwidth ratios."""

from flasc.data import BandwidthModel

from common import base_parser, mean_curve, run_series, time_to_target, write_table

SERIES = {
    "dense": dict(strategy="dense"),
    "flasc 1/4,1/4": dict(strategy="flasc", density_down=0.25, density_up=0.25),
    "flasc 1/4,1/16": dict(strategy="flasc", density_down=0.25, density_up=1 / 16),
    "flasc 1/4,1/64": dict(strategy="flasc", density_down=0.25, density_up=1 / 64),
    "sparseadapter 1/4": dict(strategy="sparseadapter", density_down=0.25),
    "adapter_lth 0.98": dict(strategy="adapter_lth", lth_keep=0.98),
}
RATIOS = (1.0, 1 / 4, 1 / 16)


def main():
    p = base_parser(__doc__)
    p.add_argument("--fraction", type=float, default=0.7)
    args = p.parse_args()
    out = args.out / "comm_time"
    results = {label: run_series(label, args.seeds, out, rounds=args.rounds, **kw) for label, kw in SERIES.items()}
    target = args.fraction * mean_curve(results["dense"])[-1]
    rows = []
    for ratio in RATIOS:
        bw = BandwidthModel(1.0, ratio)
        t_dense = time_to_target(results["dense"], target, bw)
        for label, res in results.items():
            t = time_to_target(res, target, bw)
            rel = t / t_dense if t_dense > 0 else float("nan")
            rows.append([f"{ratio:g}", label, f"{t:.6g}", f"{rel:.4f}"])
    print(f"target accuracy {target:.4f}")
    write_table(out / "time_ratios.csv", ["upload_ratio", "series", "time_units", "relative_to_dense"], rows)


if __name__ == "__main__":
    main()
