"""Compare margin curves of a plainly trained and a co-trained classifier on two moons.

Writes one CSV per model (epsilon,R,stderr,n) plus a summary line per seed.

    python3 scripts/margin_curves.py --seeds 0 1 2 --out runs/margins
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

from robusta.cotrain import CotrainConfig, cotrain, make_generator
from robusta.data import synth_dataset, train_test_split
from robusta.model_core import DifferentiableModel, accuracy, train
from robusta.robustness import attack_ensemble_oracle, auc_margin_curve, dense_sampling_oracle, margin_curve, \
    min_oracle


def run(seed, args, out):
    ds, _ = synth_dataset("two_moons", args.n, args.noise, seed)
    tr, te = train_test_split(ds, 0.5, seed)
    f0 = DifferentiableModel.init([2, *args.hidden, 2], seed=seed)
    plain, _ = train(f0, tr.X, tr.y, epochs=args.epochs, batch_size=32, learning_rate=args.lr, seed=seed)
    cfg = CotrainConfig(lambda_reg=args.lam, epochs=args.epochs, batchsize=32, lr_f=args.lr, lr_g=args.lr,
                        seed=seed)
    co, _, _ = cotrain(tr, f0, make_generator(2, tuple(args.hidden[:1]), seed=seed + 100), cfg)
    grid = np.linspace(0, math.sqrt(2), args.grid)
    oracle = min_oracle(attack_ensemble_oracle(), dense_sampling_oracle(seed=seed))
    row = {"seed": seed}
    for name, model in (("plain", plain), ("cotrain", co)):
        curve = margin_curve(model, te, grid, oracle)
        (out / f"curve_{name}_seed{seed}.csv").write_text(curve.to_csv())
        row[f"auc_{name}"] = auc_margin_curve(curve)
        row[f"acc_{name}"] = accuracy(model, te.X, te.y)
    row["ratio"] = row["auc_cotrain"] / row["auc_plain"]
    return row


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--hidden", type=int, nargs="+", default=[32, 32])
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--out", default="runs/margins")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        print(json.dumps(run(seed, args, out)), flush=True)


if __name__ == "__main__":
    main()
