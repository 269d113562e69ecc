"""Overfit a toy model on 8 synthetic 64x64 samples and report train-set SAD before and after.

    python scripts/overfit.py --epochs 300 --out runs/overfit
"""

import argparse
import time

from diffmatte.data import gen_dataset
from diffmatte.evaluation import mean_sad
from diffmatte.net.model import MattingModel
from diffmatte.training import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    data = gen_dataset(8, 64, seed=0)
    cfg = TrainConfig(epochs=args.epochs, uti_start_epoch=args.epochs, seed=args.seed)
    before = mean_sad(MattingModel(cfg.model_config, seed=cfg.seed), data, steps=1)
    start = time.perf_counter()

    def report(epoch, model, loss):
        if (epoch + 1) % max(1, args.epochs // 10) == 0:
            print(f"epoch {epoch + 1:4d}  loss {loss.total:.4f}  sad {mean_sad(model, data, 1):.4f}"
                  f"  {time.perf_counter() - start:.0f}s", flush=True)

    model = fit(cfg, data, out_dir=args.out, on_epoch=report).model
    after = mean_sad(model, data, steps=1)
    print(f"untrained SAD {before:.4f} -> trained SAD {after:.4f} ({100 * (1 - after / before):.1f}% lower)")


if __name__ == "__main__":
    main()
