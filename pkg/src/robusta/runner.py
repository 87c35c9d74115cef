"""Run one experiment task and write its result bundle.

A bundle is a directory holding ``config.json`` (the resolved config, which
reparses to the same config), ``summary.json``, task CSVs and checkpoints, and
``metadata.json`` with everything that may differ between identical runs
(timestamps, host, library versions). It is written to a temporary sibling
directory and renamed into place, so an aborted run leaves nothing behind.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import shutil
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, data, seeding
from .attacks import ensemble_adversarial, source_breakdown
from .config import ExperimentConfig
from .cotrain import cotrain, history_csv, make_generator
from .errors import ConfigError
from .estimates import mean_of
from .kernels import family_uniform_epsilon, kernel_from_descriptor
from .model_core import DifferentiableModel, LinearClassifier, accuracy, train
from .robustness import (ConstantOne, EmpiricalDensity, RobustnessSpec, analytic_linear_oracle,
                         attack_ensemble_oracle, auc_margin_curve, dense_sampling_oracle,
                         margin_curve, min_oracle, score_family, score_Q)
from .transfer import (TransferSetup, build_pools, corrupted_tests, gauss_baseline, report_csv, run_setup,
                       table_csv, train_paired_autoencoders)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Bundle:
    """Files of a run, collected in memory and written at the end."""

    def __init__(self):
        self.files = {}

    def text(self, name, content):
        self.files[name] = content

    def json(self, name, obj):
        self.files[name] = _dump(obj)

    @staticmethod
    def check_target(out):
        out = Path(out)
        if out.exists() and (not out.is_dir() or any(out.iterdir())):
            raise ConfigError(f"output directory {out} exists and is not empty")
        return out

    def write(self, out):
        out = self.check_target(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
        try:
            for name, content in self.files.items():
                (tmp / name).write_text(content)
            if out.exists():
                out.rmdir()
            os.replace(tmp, out)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        return out


# --------------------------------------------------------------------------
# inputs


def load_data(cfg):
    """Return ``(train, test, labeler)``; labeler is None for file data."""
    d, seed = cfg.dataset, cfg.seed
    labeler = None
    if d.kind == "synthetic":
        ds, labeler = data.synth_dataset(d.name, d.n, d.noise, seed, m=d.m, n_classes=d.n_classes or 3)
    elif d.kind == "glyphs":
        ds = data.synth_glyphs(d.n, d.noise, seed, n_classes=d.n_classes or 8)
    elif d.kind == "csv":
        ds = data.load_csv_dataset(d.path, d.n_classes)
    else:
        ds = data.idx_dataset(data.load_idx(d.images), data.load_idx(d.labels), d.n_classes)
    if d.test_path:
        return ds, data.load_csv_dataset(d.test_path, ds.n_classes), labeler
    if d.test_fraction == 0:
        return ds, ds, labeler
    tr, te = data.train_test_split(ds, d.test_fraction, seed)
    return tr, te, labeler


def init_model(cfg, m, n_classes):
    spec = cfg.model
    if spec.checkpoint:
        model = DifferentiableModel.load(spec.checkpoint)
        if model.n_inputs != m:
            raise ConfigError(f"checkpoint expects {model.n_inputs} inputs, data has {m}")
        return model
    hidden = () if spec.kind == "linear" else spec.hidden
    return DifferentiableModel.init([m, *hidden, n_classes], hidden=spec.activation, seed=cfg.seed)


def as_linear(model):
    """A one-layer softmax/identity network as a LinearClassifier, else None."""
    if len(model.weights) == 1 and model.activations[-1] in ("softmax", "identity"):
        return LinearClassifier(model.weights[0].T, model.biases[0])
    return None


def _fit(cfg, model, ds):
    t = cfg.train
    return train(model, ds.X, ds.y, epochs=t.epochs, batch_size=t.batch_size, optimizer=t.optimizer,
                 learning_rate=t.learning_rate, seed=cfg.seed)


def _classifier(cfg, tr):
    """Checkpoint as is, otherwise a freshly trained model. Returns (model, history)."""
    model = init_model(cfg, tr.m, tr.n_classes)
    if cfg.model.checkpoint:
        return model, []
    return _fit(cfg, model, tr)


def make_oracle(cfg, f):
    kind = cfg.robustness.oracle
    if kind == "auto":
        kind = "analytic" if isinstance(f, LinearClassifier) else "min"
    if kind == "analytic":
        if not isinstance(f, LinearClassifier):
            raise ConfigError("the analytic oracle needs a linear model")
        return analytic_linear_oracle()
    attack = attack_ensemble_oracle(dataclasses.replace(cfg.attack, metric=cfg.robustness.metric))
    if kind == "attack":
        return attack
    dense = dense_sampling_oracle(seed=cfg.seed)
    return dense if kind == "dense" else min_oracle(attack, dense)


def _loss_history_csv(history):
    lines = ["epoch,batch,loss"] + [f"{e},{b},{float(v)!r}" for e, b, v in history]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# tasks


def task_train(cfg, bundle):
    tr, te, _ = load_data(cfg)
    model = init_model(cfg, tr.m, tr.n_classes)
    model, hist = _fit(cfg, model, tr)
    bundle.text("model.json", model.to_json())
    bundle.text("history.csv", _loss_history_csv(hist))
    return {"train_accuracy": accuracy(model, tr.X, tr.y), "test_accuracy": accuracy(model, te.X, te.y),
            "n_train": len(tr), "n_test": len(te)}


def task_cotrain(cfg, bundle):
    tr, te, _ = load_data(cfg)
    f = init_model(cfg, tr.m, tr.n_classes)
    g = make_generator(tr.m, cfg.model.generator_hidden, seed=seeding.rng(cfg.seed, seeding.INIT, 1)
                       .integers(0, 2**31).item())
    f, g, hist = cotrain(tr, f, g, cfg.cotrain)
    bundle.text("f.json", f.to_json())
    bundle.text("g.json", g.to_json())
    bundle.text("history.csv", history_csv(hist))
    return {"train_accuracy": accuracy(f, tr.X, tr.y), "test_accuracy": accuracy(f, te.X, te.y),
            "n_train": len(tr), "n_test": len(te), "n_steps": len(hist)}


def _score(cfg, f, te, labeler, s):
    r = cfg.robustness
    G = ConstantOne() if s.G == "one" else EmpiricalDensity(te)
    oracle = make_oracle(cfg, f)
    spec = RobustnessSpec(n_inner=r.n_inner, n_outer=r.n_outer, seed=cfg.seed, oracle=oracle, dim=te.m)
    if s.family:
        fam = family_uniform_epsilon(m=te.m, metric=r.metric)
        est = score_family(f, fam, s.H, G, spec.replace(family=fam))
        what = fam.name
    else:
        Q = kernel_from_descriptor(dict(s.kernel), dataset=te, labeler=labeler)
        est = score_Q(f, Q, s.H, G, spec)
        what = Q.descriptor()
    return {"kernel": what, "H": s.H, "G": s.G, **est.to_dict()}


def task_eval_robustness(cfg, bundle):
    tr, te, labeler = load_data(cfg)
    model, _ = _classifier(cfg, tr)
    f = as_linear(model) or model
    r = cfg.robustness
    d = np.sqrt(te.m) if r.metric == "l2" else 1.0
    grid = np.linspace(0.0, d, r.grid_points)
    oracle = make_oracle(cfg, f)
    curve = margin_curve(f, te, grid, oracle, r.metric)
    bundle.text("margin_curve.csv", curve.to_csv())
    ok = ~np.isnan(curve.margins)
    avg = mean_of(curve.margins[ok], te.probabilities()[ok])
    if not cfg.model.checkpoint:
        bundle.text("model.json", model.to_json())
    return {"auc": auc_margin_curve(curve), "average_margin": avg.to_dict(), "oracle": oracle.kind,
            "accuracy": accuracy(f, te.X, te.y), "n_failed": curve.n_failed, "n": len(te),
            "scores": [_score(cfg, f, te, labeler, s) for s in r.scores]}


def task_attack(cfg, bundle):
    tr, te, _ = load_data(cfg)
    model, _ = _classifier(cfg, tr)
    acfg = dataclasses.replace(cfg.attack, metric=cfg.robustness.metric)
    recs = ensemble_adversarial(model, te.X, acfg)
    lines = ["index,source,distance,flipped,multi_crossing," + ",".join(f"x_star{i}" for i in range(te.m))]
    for i, r in enumerate(recs):
        lines.append(f"{i},{r.source or ''},{float(r.distance)!r},{int(r.flipped)},{int(r.multi_crossing)},"
                     + ",".join(repr(float(v)) for v in r.x_star))
    bundle.text("attack_records.csv", "\n".join(lines) + "\n")
    flipped = [r.distance for r in recs if r.flipped]
    return {"breakdown": source_breakdown(recs), "mean_distance_flipped": float(np.mean(flipped)) if flipped
            else None, "accuracy": accuracy(model, te.X, te.y)}


def _transfer_common(cfg):
    t = cfg.transfer
    if not t.corruptions:
        raise ConfigError("transfer tasks need at least one corruption")
    tr, te, _ = load_data(cfg)
    f, hist = _classifier(cfg, tr)
    ae = dataclasses.replace(t.ae, seed=cfg.seed)
    return t, tr, te, f, hist, ae


def task_transfer_train(cfg, bundle):
    t, tr, te, f, hist, ae = _transfer_common(cfg)
    bundle.text("f.json", f.to_json())
    trained = []
    for mode in t.modes:
        for n_c in t.n_c:
            setup = TransferSetup(mode, n_c, t.total, ae)
            pools = build_pools(setup, t.corruptions, tr, cfg.seed)
            groups = ([np.concatenate([b.X for b in pools.corrupted])] if mode == "joint"
                      else [b.X for b in pools.corrupted])
            for k, Xk in enumerate(groups):
                pair, h = train_paired_autoencoders(pools.clean, Xk, ae)
                tag = f"{mode}_nc{n_c}" + ("" if mode == "joint" else f"_c{k}")
                bundle.json(f"ae_{tag}.json", pair.to_dict())
                lines = ["epoch,step,pool,loss"] + [f"{e},{s},{p},{float(v)!r}" for e, s, p, v in h]
                bundle.text(f"ae_history_{tag}.csv", "\n".join(lines) + "\n")
                trained.append({"tag": tag, "n_o": len(pools.clean), "n_corrupted": len(Xk),
                                "final_loss": h[-1][3] if h else None})
    return {"classifier_test_accuracy": accuracy(f, te.X, te.y), "autoencoders": trained}


def task_transfer_eval(cfg, bundle):
    t, tr, te, f, hist, ae = _transfer_common(cfg)
    names = [op.name for op in t.corruptions]
    tests = corrupted_tests(t.corruptions, te, cfg.seed)
    clean_acc = accuracy(f, te.X, te.y)
    plain = [accuracy(f, c.X, c.y) for c in tests] + [clean_acc]
    g0 = DifferentiableModel.init(f.layer_sizes, hidden=cfg.model.activation, seed=cfg.seed)
    tcfg = cfg.train
    fg, gauss = gauss_baseline(g0, tr, t.corruptions, te, sigma=t.gauss_sigma, epochs=tcfg.epochs,
                               batch_size=tcfg.batch_size, learning_rate=tcfg.learning_rate, seed=cfg.seed)
    gauss = gauss + [accuracy(fg, te.X, te.y)]
    results = {}
    for mode in t.modes:
        for n_c in t.n_c:
            rows = run_setup(TransferSetup(mode, n_c, t.total, ae), t.corruptions, f, tr, te, cfg.seed)
            results[(mode, n_c)] = rows
            bundle.text(f"report_{mode}_nc{n_c}.csv", report_csv(rows))
    bundle.text("table.csv", table_csv(names, plain, gauss, results))
    return {"plain": dict(zip(names + ["clean"], plain)), "gauss": dict(zip(names + ["clean"], gauss)),
            "transfer": [{**r} for rows in results.values() for r in rows]}


TASK_FUNCS = {
    "train": task_train,
    "cotrain": task_cotrain,
    "eval-robustness": task_eval_robustness,
    "attack": task_attack,
    "transfer-train": task_transfer_train,
    "transfer-eval": task_transfer_eval,
}


def resolve(cfg):
    """Pin every seed in the config to the experiment seed."""
    return cfg.replace(cotrain=dataclasses.replace(cfg.cotrain, seed=cfg.seed),
                       transfer=dataclasses.replace(cfg.transfer,
                                                    ae=dataclasses.replace(cfg.transfer.ae, seed=cfg.seed)))


def default_out(cfg):
    return Path("runs") / f"{cfg.task}-seed{cfg.seed}"


def run_experiment(cfg: ExperimentConfig, out=None, threads=None):
    """Execute ``cfg.task`` and write the bundle; returns ``(out_dir, summary)``."""
    cfg = resolve(cfg)
    out = Bundle.check_target(out or cfg.out or default_out(cfg))
    started = time.time()
    bundle = Bundle()
    summary = TASK_FUNCS[cfg.task](cfg, bundle)
    summary = {"task": cfg.task, "seed": cfg.seed, "version": __version__, **summary}
    bundle.json("summary.json", summary)
    bundle.text("config.json", cfg.to_json())
    bundle.json("metadata.json", {
        "started": started, "finished": time.time(), "version": __version__,
        "python": platform.python_version(), "numpy": np.__version__, "host": platform.node(),
        "threads": threads,
    })
    return bundle.write(out), summary
