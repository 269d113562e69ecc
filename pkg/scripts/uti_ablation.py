"""Train matched toy models with and without UTI and compare how SAD changes from 1 to 10 steps.

Writes uti_ablation.csv (seed, uti, sad_1, sad_10, degradation) to --out.

    python scripts/uti_ablation.py --seeds 0 1 2 --epochs 300 --out runs/uti
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from diffmatte.data import gen_dataset
from diffmatte.evaluation import mean_sad
from diffmatte.training import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--heldout-seed", type=int, default=1000)
    ap.add_argument("--out", default="runs/uti")
    args = ap.parse_args()

    train, held = gen_dataset(8, 64, 0), gen_dataset(8, 64, args.heldout_seed)
    rows = []
    for uti in (False, True):
        for seed in args.seeds:
            start = int(0.75 * args.epochs) if uti else args.epochs
            model = fit(TrainConfig(epochs=args.epochs, uti_start_epoch=start, seed=seed), train).model
            s1, s10 = mean_sad(model, held, 1, seed=7), mean_sad(model, held, 10, seed=7)
            rows.append((seed, int(uti), s1, s10, s10 - s1))
            print(f"seed {seed} uti {uti}: SAD@1 {s1:.4f} SAD@10 {s10:.4f} degradation {s10 - s1:+.4f}", flush=True)
    for uti in (0, 1):
        print(f"{'UTI' if uti else 'plain'} mean degradation {np.mean([r[4] for r in rows if r[1] == uti]):+.4f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "uti_ablation.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "uti", "sad_1", "sad_10", "degradation"])
        w.writerows([r[0], r[1], f"{r[2]:.6f}", f"{r[3]:.6f}", f"{r[4]:.6f}"] for r in rows)


if __name__ == "__main__":
    main()
