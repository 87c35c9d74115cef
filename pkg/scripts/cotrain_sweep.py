"""Sweep the co-training weight lambda and report margin-curve area and accuracy.

    python3 scripts/cotrain_sweep.py --lams 0 0.1 0.5 1 --seeds 0 1 > sweep.csv
"""

import argparse
import math

import numpy as np

from robusta.cotrain import CotrainConfig, cotrain, make_generator
from robusta.data import synth_dataset, train_test_split
from robusta.model_core import DifferentiableModel, accuracy
from robusta.robustness import attack_ensemble_oracle, auc_margin_curve, dense_sampling_oracle, margin_curve, \
    min_oracle


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lams", type=float, nargs="+", default=[0.0, 0.1, 0.5, 1.0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--dataset", default="two_moons", choices=["two_moons", "linear_separable"])
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--augment", action="store_true", help="also fit f on g(x) with the true label")
    args = p.parse_args()
    grid = np.linspace(0, math.sqrt(2), 100)
    print("dataset,seed,lambda,auc,accuracy")
    for seed in args.seeds:
        ds, _ = synth_dataset(args.dataset, args.n, 0.1, seed)
        tr, te = train_test_split(ds, 0.5, seed)
        oracle = min_oracle(attack_ensemble_oracle(), dense_sampling_oracle(seed=seed))
        for lam in args.lams:
            cfg = CotrainConfig(lambda_reg=lam, epochs=args.epochs, batchsize=32, lr_f=0.01, lr_g=0.01, seed=seed,
                                augment_ce=args.augment)
            f, _, _ = cotrain(tr, DifferentiableModel.init([2, 32, 32, 2], seed=seed),
                              make_generator(2, (32,), seed=seed + 100), cfg)
            auc = auc_margin_curve(margin_curve(f, te, grid, oracle))
            print(f"{args.dataset},{seed},{lam:g},{auc:.6f},{accuracy(f, te.X, te.y):.4f}", flush=True)


if __name__ == "__main__":
    main()
