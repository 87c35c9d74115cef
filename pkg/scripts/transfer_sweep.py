"""Corrupted and clean accuracy of f(T(x~)) over N_c, both modes, averaged over seeds.

    python3 scripts/transfer_sweep.py --seeds 0 1 2 --n-c 0 50 200
"""

import argparse
import json

import numpy as np

from robusta.data import synth_glyphs, train_test_split
from robusta.model_core import DifferentiableModel, accuracy, train
from robusta.transfer import AEConfig, CorruptionOp, TransferSetup, corrupted_tests, run_setup

DEFAULT = [{"kind": "brightness", "amount": 0.3},
           {"kind": "stripe", "amount": 2, "value": 0.5, "axis": 1},
           {"kind": "stripe", "amount": 2, "value": 0.5, "axis": 0}]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--n-c", type=int, nargs="+", default=[0, 50, 400])
    p.add_argument("--total", type=int, default=1900)
    p.add_argument("--corruptions", default=None, help="JSON list of corruption dicts")
    p.add_argument("--ae-epochs", type=int, default=60)
    args = p.parse_args()
    ops = [CorruptionOp.from_dict(d) for d in (json.loads(args.corruptions) if args.corruptions else DEFAULT)]
    cells = {}
    for seed in args.seeds:
        tr, te = train_test_split(synth_glyphs(3000, 0.1, seed), 1 / 3, seed)
        f, _ = train(DifferentiableModel.init([64, 64, 8], seed=seed), tr.X, tr.y, epochs=30,
                     learning_rate=3e-3, seed=seed)
        cells.setdefault("plain", []).append([accuracy(f, t.X, t.y) for t in corrupted_tests(ops, te, seed)])
        for mode in ("separate", "joint"):
            for n_c in args.n_c:
                setup = TransferSetup(mode, n_c, args.total, AEConfig(latent=32, hidden=(256, 128), epochs=args.ae_epochs,
                                                                      learning_rate=1e-3, seed=seed))
                rows = run_setup(setup, ops, f, tr, te, seed)
                cells.setdefault(f"{mode}/{n_c}", []).append([r["corrupted_acc"] for r in rows])
                cells.setdefault(f"{mode}/{n_c}/clean", []).append([r["clean_acc"] for r in rows])
    print("cell," + ",".join(op.name for op in ops))
    for key, vals in cells.items():
        print(key + "," + ",".join(f"{v:.4f}" for v in np.mean(vals, axis=0)))


if __name__ == "__main__":
    main()
