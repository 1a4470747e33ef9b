"""Global DP with a simulated cohort: accuracy of adapters of several ranks,
FLASC and FFA-LoRA as the noise multiplier grows."""

import numpy as np

from common import base_parser, run_series, write_table

SIGMAS = (0.0, 100.0, 200.0, 400.0)


def main():
    p = base_parser(__doc__)
    p.add_argument("--clip", type=float, default=0.01)
    p.add_argument("--ranks", type=int, nargs="+", default=[4, 16, 64])
    args = p.parse_args()
    out = args.out / "privacy"
    rows = []
    for sigma in SIGMAS:
        dp = dict(dp_enabled=sigma > 0, dp_sigma=sigma, dp_clip=args.clip)
        series = {f"dense r={r}": dict(strategy="dense", lora_rank=r) for r in args.ranks}
        series["flasc r=16 d=1/2"] = dict(strategy="flasc", density_down=0.5, density_up=0.5)
        series["ffa r=16"] = dict(strategy="ffa")
        for label, kw in series.items():
            res = run_series(f"{label} sigma={sigma:g}", args.seeds, out, rounds=args.rounds, **kw, **dp)
            rows.append([label, f"{sigma:g}", f"{np.mean([r.final.accuracy for r in res]):.4f}"])
    write_table(out / "privacy.csv", ["series", "sigma", "mean_final_accuracy"], rows)


if __name__ == "__main__":
    main()
