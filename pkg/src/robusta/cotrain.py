"""Adversarial co-training of a classifier f and a generator g.

g learns to map x to a nearby point that f labels differently; f is trained
with cross-entropy plus a regularizer that penalizes disagreement between
f(x) and f(g(x)), weighted up when g(x) is close to x.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import seeding
from .errors import ConfigError, DivergenceError, InputShapeError
from .model_core import PROB_FLOOR, DifferentiableModel, Optimizer, as_batch, cross_entropy, minibatches


@dataclass(frozen=True)
class CotrainConfig:
    lambda_reg: float = 1.0
    batchsize: int = 32
    epochs: int = 10
    lr_f: float = 1e-3
    lr_g: float = 1e-3
    optimizer: str = "adam"
    # also fit g(x) to the label of x (the augmented-batch reading of the schedule)
    augment_ce: bool = False
    train_generator: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lambda_reg < 0:
            raise ConfigError("lambda_reg must be >= 0")
        if self.batchsize < 1 or self.epochs < 0:
            raise ConfigError("batchsize must be >= 1 and epochs >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad cotrain config: {exc}") from None

    def to_dict(self):
        return asdict(self)


def make_generator(m, hidden=(32,), seed=0):
    """Dense generator R^m -> (0,1)^m with a sigmoid output layer."""
    return DifferentiableModel.init([m, *hidden, m], output="sigmoid", seed=seed)


def _apply(g, X):
    return X.copy() if g is None else g.forward(X)


def _check(g, f, X):
    if g is not None and g.n_outputs != g.n_inputs:
        raise InputShapeError("generator must map R^m to R^m")
    if g is not None and g.n_inputs != X.shape[1]:
        raise InputShapeError("generator input dimension does not match x")
    if f.n_inputs != X.shape[1]:
        raise InputShapeError("classifier input dimension does not match x")


def _second_index(P):
    # stable sort: ties resolve to the lowest index
    return np.argsort(-P, axis=1, kind="stable")[:, 1]


def _generator_terms(g, f, X):
    Gc = None if g is None else g.forward_cache(X)
    G = X.copy() if g is None else Gc[2]
    i = f.predict(X)
    fc = f.forward_cache(G)
    P = fc[2]
    j = _second_index(P)
    rows = np.arange(len(X))
    gap = P[rows, i] - P[rows, j]
    loss = 0.5 * np.sum((G - X) ** 2, axis=1) + np.maximum(gap, 0.0)
    return Gc, G, fc, P, i, j, gap, loss


def generator_loss(g, f, x):
    """0.5 |g(x) - x|^2 + max(f(g(x))[i] - f(g(x))[j], 0), averaged over a batch.

    i is f's label at x and j the index of the second largest entry of f(g(x)).
    ``g=None`` stands for the identity map.
    """
    X, single = as_batch(x)
    _check(g, f, X)
    loss = _generator_terms(g, f, X)[-1]
    return float(loss[0]) if single else float(loss.mean())


def generator_loss_grad(g, f, X):
    """Mean generator loss and its gradient with respect to g's parameters."""
    X, _ = as_batch(X)
    _check(g, f, X)
    Gc, G, fc, P, i, j, gap, loss = _generator_terms(g, f, X)
    n = len(X)
    rows = np.arange(n)
    dP = np.zeros_like(P)
    on = gap > 0
    dP[rows[on], i[on]] += 1.0
    dP[rows[on], j[on]] -= 1.0
    _, dG_gap = f.backward(fc, grad_out=dP)
    dG = (G - X) + dG_gap
    grads, _ = g.backward(Gc, grad_out=dG / n)
    return grads, float(loss.mean())


def classifier_loss(f, g, x, y, lambda_reg):
    """-log f(x)[y] + lambda CE(f(x), f(g(x))) / (1 + |x - g(x)|^2), batch mean."""
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be >= 0")
    X, single = as_batch(x)
    _check(g, f, X)
    y = np.broadcast_to(np.asarray(y, dtype=np.int64), (len(X),))
    G = _apply(g, X)
    P = f.forward(X)
    Pg = f.forward(G)
    ce = -np.log(np.maximum(P[np.arange(len(X)), y], PROB_FLOOR))
    reg = cross_entropy(P, Pg) / (1.0 + np.sum((X - G) ** 2, axis=1))
    loss = ce + lambda_reg * reg
    return float(loss[0]) if single else float(loss.mean())


def classifier_loss_grad(f, g, X, y, lambda_reg, augment_ce=False):
    """Mean regularized classifier loss and its gradient w.r.t. f's parameters.

    g is held fixed. With ``lambda_reg == 0`` and no augmentation this performs
    exactly the arithmetic of plain cross-entropy training.
    """
    X, _ = as_batch(X)
    _check(g, f, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    n = len(X)
    if n == 0:
        raise ValueError("empty batch")
    rows = np.arange(n)
    cx = f.forward_cache(X)
    P = cx[2]
    loss = -np.log(np.maximum(P[rows, y], PROB_FLOOR))
    pre_x = f._ce_grad_pre(P, y)
    if lambda_reg == 0 and not augment_ce:
        grads, _ = f.backward(cx, grad_pre=pre_x / n)
        return grads, float(loss.mean())
    G = _apply(g, X)
    cg = f.forward_cache(G)
    Pg = cg[2]
    s = lambda_reg / (1.0 + np.sum((X - G) ** 2, axis=1))
    logq = np.log(np.maximum(Pg, PROB_FLOOR))
    loss = loss + s * -np.sum(P * logq, axis=1)
    # d/dP of -sum P log q, through the softmax at x
    gout = -logq * s[:, None]
    pre_x = pre_x + P * (gout - np.sum(P * gout, axis=1, keepdims=True))
    # d/dq of -sum P log max(q, floor), through the softmax at g(x)
    Pm = P * (Pg > PROB_FLOOR)
    pre_g = (-Pm + Pg * Pm.sum(axis=1, keepdims=True)) * s[:, None]
    if augment_ce:
        loss = loss - np.log(np.maximum(Pg[rows, y], PROB_FLOOR))
        pre_g = pre_g + f._ce_grad_pre(Pg, y)
    gx, _ = f.backward(cx, grad_pre=pre_x / n)
    gg, _ = f.backward(cg, grad_pre=pre_g / n)
    return tuple(a + b for a, b in zip(gx, gg)), float(loss.mean())


def cotrain(dataset, f, g, cfg=CotrainConfig()):
    """Alternating co-training; returns ``(f, g, history)``.

    Each epoch shuffles the data twice into mini-batches (one stream for f, one
    for g). For each batch pair, f takes a step on the regularized loss with g
    fixed, then g takes a step on the generator loss against the updated f.
    History rows are ``(epoch, batch, loss_f, loss_g)``. ``g=None`` keeps the
    generator frozen at the identity map.
    """
    X, y = dataset.X, dataset.y
    if len(X) == 0:
        raise ValueError("empty dataset")
    opt_f = Optimizer(cfg.optimizer, cfg.lr_f)
    opt_g = Optimizer(cfg.optimizer, cfg.lr_g)
    train_g = cfg.train_generator and g is not None
    history = []
    for epoch in range(cfg.epochs):
        bf = minibatches(len(X), cfg.batchsize, cfg.seed, seeding.SHUFFLE_F, epoch)
        bg = minibatches(len(X), cfg.batchsize, cfg.seed, seeding.SHUFFLE_G, epoch)
        for b, (i_f, i_g) in enumerate(zip(bf, bg)):
            grads, loss_f = classifier_loss_grad(f, g, X[i_f], y[i_f], cfg.lambda_reg, cfg.augment_ce)
            if not math.isfinite(loss_f):
                raise DivergenceError(f"classifier loss diverged at epoch {epoch}, batch {b}", epoch, b)
            f = opt_f.step(f, grads)
            loss_g = float("nan")
            if train_g:
                ggrads, loss_g = generator_loss_grad(g, f, X[i_g])
                if not math.isfinite(loss_g):
                    raise DivergenceError(f"generator loss diverged at epoch {epoch}, batch {b}", epoch, b)
                g = opt_g.step(g, ggrads)
            history.append((epoch, b, loss_f, loss_g))
    return f, g, history


def history_csv(history):
    lines = ["epoch,batch,loss_f,loss_g"]
    lines += [f"{e},{b},{float(lf)!r},{float(lg)!r}" for e, b, lf, lg in history]
    return "\n".join(lines) + "\n"
