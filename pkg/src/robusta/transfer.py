"""Robustness to distribution shift through a learned transfer map.

Two autoencoders share an encoder E. D1 reconstructs clean inputs, D2
reconstructs corrupted ones; because E must serve both, T = D1(E(.)) maps a
corrupted input toward the clean manifold, and a classifier trained on clean
data is applied as f(T(x~)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import seeding
from .errors import ConfigError, DatasetError, DivergenceError, InputShapeError
from .model_core import DifferentiableModel, LabeledDataset, Optimizer, accuracy, as_batch, minibatches, train

# --------------------------------------------------------------------------
# corruptions

CORRUPTIONS = ("gaussian_noise", "brightness", "impulse", "stripe", "translate", "invert")
_DEFAULT_AMOUNT = {"gaussian_noise": 0.1, "brightness": 0.3, "impulse": 0.1,
                   "stripe": 2, "translate": 1, "invert": None}


@dataclass(frozen=True)
class CorruptionOp:
    """A corruption x -> x~ on [0,1]^m.

    ``amount`` is sigma (gaussian_noise), the additive offset (brightness), the
    per-pixel flip rate (impulse), the band width in columns (stripe) or the
    column shift in pixels (translate); invert takes none. ``value`` is the
    stripe fill intensity and ``axis`` the band orientation (1: a band of
    columns, 0: a band of rows), centred unless ``start`` is given.
    Image-shaped kinds need a square number of pixels.
    """

    kind: str
    amount: float | None = None
    value: float = 1.0
    axis: int = 1
    start: int | None = None

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if self.amount is None and self.kind != "invert":
            object.__setattr__(self, "amount", _DEFAULT_AMOUNT[self.kind])
        a = self.amount
        if self.kind == "gaussian_noise" and not a >= 0:
            raise ConfigError("gaussian_noise sigma must be >= 0")
        if self.kind == "impulse" and not 0 <= a <= 1:
            raise ConfigError("impulse rate must be in [0, 1]")
        if self.kind in ("stripe", "translate") and int(a) != a:
            raise ConfigError(f"{self.kind} amount must be an integer")
        if self.kind == "stripe" and a < 0:
            raise ConfigError("stripe width must be >= 0")
        if not 0 <= self.value <= 1:
            raise ConfigError("stripe value must be in [0, 1]")
        if self.axis not in (0, 1):
            raise ConfigError("axis must be 0 (rows) or 1 (columns)")
        if self.start is not None and self.start < 0:
            raise ConfigError("stripe start must be >= 0")

    @property
    def name(self):
        if self.kind == "stripe":
            where = "" if self.start is None else f"@{self.start}"
            return f"stripe_{'rows' if self.axis == 0 else 'cols'}({self.amount:g}{where},{self.value:g})"
        return self.kind if self.amount is None else f"{self.kind}({self.amount:g})"

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad corruption: {exc}") from None

    def to_dict(self):
        return asdict(self)


def _side(m):
    s = math.isqrt(m)
    if s * s != m:
        raise InputShapeError(f"image corruption needs a square pixel count, got m={m}")
    return s


def apply_corruption(op, x, seed=0, index=0):
    """Corrupt a point or a batch; stochastic kinds use the (seed, index) stream."""
    X, single = as_batch(x)
    n, m = X.shape
    k = op.kind
    if k == "gaussian_noise":
        gen = seeding.rng(seed, seeding.CORRUPT, index)
        out = X + op.amount * gen.standard_normal(X.shape)
    elif k == "brightness":
        out = X + op.amount
    elif k == "impulse":
        gen = seeding.rng(seed, seeding.CORRUPT, index)
        hit = gen.random(X.shape) < op.amount
        salt = gen.random(X.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), X)
    elif k == "invert":
        out = 1.0 - X
    else:
        side = _side(m)
        img = X.reshape(n, side, side).copy()
        w = int(op.amount)
        if k == "stripe":
            start = (side - w) // 2 if op.start is None else op.start
            if op.axis == 1:
                img[:, :, start:start + w] = op.value
            else:
                img[:, start:start + w, :] = op.value
        else:
            shifted = np.zeros_like(img)
            if w >= 0:
                shifted[:, :, w:] = img[:, :, :side - w]
            else:
                shifted[:, :, :side + w] = img[:, :, -w:]
            img = shifted
        out = img.reshape(n, m)
    out = np.clip(out, 0.0, 1.0)
    return out[0] if single else out


# --------------------------------------------------------------------------
# paired autoencoders


@dataclass(frozen=True)
class AEConfig:
    latent: int = 32
    hidden: tuple = (64,)
    epochs: int = 30
    batchsize: int = 32
    learning_rate: float = 3e-3
    optimizer: str = "adam"
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.latent < 1 or self.batchsize < 1 or self.epochs < 0:
            raise ConfigError("latent and batchsize must be >= 1, epochs >= 0")
        if self.loss not in ("mse", "bce"):
            raise ConfigError(f"unknown reconstruction loss {self.loss!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad autoencoder config: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(frozen=True, eq=False)
class PairedAutoencoders:
    E: DifferentiableModel
    D1: DifferentiableModel
    D2: DifferentiableModel

    def __post_init__(self):
        k = self.E.n_outputs
        if self.D1.n_inputs != k or self.D2.n_inputs != k:
            raise InputShapeError("decoders must accept the encoder's latent dimension")
        m = self.E.n_inputs
        if self.D1.n_outputs != m or self.D2.n_outputs != m:
            raise InputShapeError("decoders must reconstruct the input dimension")

    @classmethod
    def init(cls, m, latent=32, hidden=(64,), seed=0):
        """Encoder m -> hidden -> latent (linear code); decoders mirror it with a sigmoid output."""
        s = seeding.rng(seed, seeding.AE).integers(0, 2**31, size=3)
        hidden = tuple(hidden)
        E = DifferentiableModel.init([m, *hidden, latent], output="identity", seed=int(s[0]))
        dec = [latent, *hidden[::-1], m]
        D1 = DifferentiableModel.init(dec, output="sigmoid", seed=int(s[1]))
        D2 = DifferentiableModel.init(dec, output="sigmoid", seed=int(s[2]))
        return cls(E, D1, D2)

    @property
    def m(self):
        return self.E.n_inputs

    def reconstruct(self, X, which=1):
        D = self.D1 if which == 1 else self.D2
        return D.forward(self.E.forward(X))

    def to_dict(self):
        return {"E": self.E.to_dict(), "D1": self.D1.to_dict(), "D2": self.D2.to_dict()}

    @classmethod
    def from_dict(cls, doc):
        return cls(*(DifferentiableModel.from_dict(doc[k]) for k in ("E", "D1", "D2")))


def reconstruction_loss(ae, X, which=1, loss="mse"):
    """Mean per-pixel reconstruction loss of D_which(E(X)) against X."""
    X, _ = as_batch(X, ae.m)
    R = ae.reconstruct(X, which)
    if loss == "mse":
        return float(np.mean((R - X) ** 2))
    Rc = np.clip(R, 1e-12, 1 - 1e-12)
    return float(-np.mean(X * np.log(Rc) + (1 - X) * np.log(1 - Rc)))


def reconstruction_loss_grad(ae, X, which=1, loss="mse"):
    """Mean reconstruction loss and gradients ``(grads_E, grads_D)``."""
    X, _ = as_batch(X, ae.m)
    if len(X) == 0:
        raise ValueError("empty batch")
    D = ae.D1 if which == 1 else ae.D2
    ce = ae.E.forward_cache(X)
    cd = D.forward_cache(ce[2])
    R = cd[2]
    size = X.size
    if loss == "mse":
        val = float(np.mean((R - X) ** 2))
        gd, gz = D.backward(cd, grad_out=2.0 * (R - X) / size)
    else:
        Rc = np.clip(R, 1e-12, 1 - 1e-12)
        val = float(-np.mean(X * np.log(Rc) + (1 - X) * np.log(1 - Rc)))
        # sigmoid + binary cross-entropy: gradient at the pre-activation is r - x
        gd, gz = D.backward(cd, grad_pre=(R - X) / size)
    ge, _ = ae.E.backward(ce, grad_out=gz)
    return ge, gd, val


def train_paired_autoencoders(clean, corrupted=None, cfg=AEConfig(), ae=None):
    """Fit (E, D1) on clean inputs and (E, D2) on corrupted ones.

    Each step takes one clean mini-batch and then one corrupted mini-batch
    while either pool still has batches left this epoch. With an empty
    corrupted pool D2 is never touched. Returns ``(ae, history)`` with rows
    ``(epoch, step, pool, loss)``.
    """
    Xc = np.asarray(getattr(clean, "X", clean), dtype=np.float64)
    Xk = np.zeros((0, Xc.shape[1])) if corrupted is None else np.asarray(getattr(corrupted, "X", corrupted),
                                                                          dtype=np.float64)
    if len(Xc) == 0:
        raise DatasetError("clean pool is empty")
    if Xk.shape[1] != Xc.shape[1]:
        raise InputShapeError("clean and corrupted pools differ in dimension")
    if ae is None:
        ae = PairedAutoencoders.init(Xc.shape[1], cfg.latent, cfg.hidden, cfg.seed)
    E, D1, D2 = ae.E, ae.D1, ae.D2
    opt = {k: Optimizer(cfg.optimizer, cfg.learning_rate) for k in ("E", "D1", "D2")}
    history = []
    for epoch in range(cfg.epochs):
        bc = minibatches(len(Xc), cfg.batchsize, cfg.seed, seeding.SHUFFLE_F, epoch)
        bk = minibatches(len(Xk), cfg.batchsize, cfg.seed, seeding.SHUFFLE_G, epoch) if len(Xk) else []
        for step in range(max(len(bc), len(bk))):
            for pool, batches, X in (("clean", bc, Xc), ("corrupted", bk, Xk)):
                if step >= len(batches):
                    continue
                which = 1 if pool == "clean" else 2
                cur = PairedAutoencoders(E, D1, D2)
                ge, gd, val = reconstruction_loss_grad(cur, X[batches[step]], which, cfg.loss)
                if not math.isfinite(val):
                    raise DivergenceError(f"{pool} reconstruction diverged at epoch {epoch}, step {step}",
                                          epoch, step)
                E = opt["E"].step(E, ge)
                if which == 1:
                    D1 = opt["D1"].step(D1, gd)
                else:
                    D2 = opt["D2"].step(D2, gd)
                history.append((epoch, step, pool, val))
    return PairedAutoencoders(E, D1, D2), history


def transfer_map(ae, x_tilde):
    """T(x~) = D1(E(x~)), in (0,1)^m."""
    X, single = as_batch(x_tilde, ae.m)
    out = ae.reconstruct(X, 1)
    return out[0] if single else out


def eval_transfer(f, ae, corrupted_test):
    """Accuracy of f(T(x~)) on a labeled corrupted test set; ``ae=None`` skips T."""
    if len(corrupted_test) == 0:
        raise ValueError("empty test set")
    X = corrupted_test.X if ae is None else transfer_map(ae, corrupted_test.X)
    return accuracy(f, X, corrupted_test.y)


# --------------------------------------------------------------------------
# experiment setups


@dataclass(frozen=True)
class TransferSetup:
    """Training budget: ``total`` source images, ``n_c`` corrupted ones per corruption.

    The clean pool gets ``total - n_corruptions * n_c`` images; every training
    source index is used at most once across the clean and corrupted pools.
    """

    mode: str = "separate"
    n_c: int = 0
    total: int = 1000
    ae: AEConfig = field(default_factory=AEConfig)

    def __post_init__(self):
        if self.mode not in ("separate", "joint"):
            raise ConfigError(f"unknown transfer mode {self.mode!r}")
        if self.n_c < 0 or self.total < 1:
            raise ConfigError("n_c must be >= 0 and total >= 1")

    def n_o(self, n_corruptions):
        n_o = self.total - n_corruptions * self.n_c
        if n_o < 1:
            raise ConfigError(f"budget violation: N_o = {self.total} - {n_corruptions} x {self.n_c} = {n_o}")
        return n_o

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        try:
            ae = AEConfig.from_dict(doc.pop("ae", {}))
            return cls(ae=ae, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad transfer setup: {exc}") from None

    def to_dict(self):
        d = asdict(self)
        d["ae"] = self.ae.to_dict()
        return d


@dataclass(frozen=True)
class TransferPools:
    clean: LabeledDataset
    corrupted: tuple  # one LabeledDataset per corruption; ids are source ids


def build_pools(setup, corruptions, train_pool, seed=0):
    """Split source indices into a clean pool and one disjoint block per corruption."""
    K = len(corruptions)
    n_o = setup.n_o(K)
    need = n_o + K * setup.n_c
    if need > len(train_pool):
        raise ConfigError(f"budget needs {need} source images, pool has {len(train_pool)}")
    perm = seeding.rng(seed, seeding.SPLIT, 1).permutation(len(train_pool))
    clean = train_pool.subset(np.sort(perm[:n_o]))
    blocks = []
    for k, op in enumerate(corruptions):
        idx = np.sort(perm[n_o + k * setup.n_c: n_o + (k + 1) * setup.n_c])
        src = train_pool.subset(idx)
        Xk = apply_corruption(op, src.X, seed, index=1000 + k) if len(idx) else src.X
        blocks.append(LabeledDataset(Xk, src.y, src.n_classes, ids=src.ids))
    check_disjoint(clean, blocks)
    return TransferPools(clean, tuple(blocks))


def check_disjoint(clean, blocks):
    seen = set(clean.ids.tolist())
    for b in blocks:
        ids = set(b.ids.tolist())
        if seen & ids:
            raise DatasetError("a corrupted training example is the corruption of a clean training example")
        seen |= ids


def corrupted_tests(corruptions, test, seed=0):
    return [LabeledDataset(apply_corruption(op, test.X, seed, index=k), test.y, test.n_classes)
            for k, op in enumerate(corruptions)]


def run_setup(setup, corruptions, f, train_pool, test, seed=0):
    """Train transfer maps for one setup and evaluate f(T(.)) per corruption.

    Returns rows ``{"corruption", "mode", "n_c", "corrupted_acc", "clean_acc"}``.
    separate: one autoencoder pair per corruption on its own block.
    joint: one pair on the pooled blocks. Both use the same autoencoder seed,
    so at ``n_c = 0`` the two modes coincide exactly.
    """
    if not corruptions:
        raise ConfigError("need at least one corruption")
    pools = build_pools(setup, corruptions, train_pool, seed)
    tests = corrupted_tests(corruptions, test, seed)
    rows = []

    def row(op, ae, t):
        return {"corruption": op.name, "mode": setup.mode, "n_c": setup.n_c,
                "corrupted_acc": eval_transfer(f, ae, t), "clean_acc": eval_transfer(f, ae, test)}

    if setup.mode == "joint":
        pooled = np.concatenate([b.X for b in pools.corrupted])
        ae, _ = train_paired_autoencoders(pools.clean, pooled, setup.ae)
        rows = [row(op, ae, t) for op, t in zip(corruptions, tests)]
    else:
        for op, block, t in zip(corruptions, pools.corrupted, tests):
            ae, _ = train_paired_autoencoders(pools.clean, block, setup.ae)
            rows.append(row(op, ae, t))
    return rows


def gauss_baseline(f_init, train_pool, corruptions, test, *, sigma=0.1, epochs=30, batch_size=32,
                   learning_rate=3e-3, seed=0):
    """Train f on the clean pool plus a Gaussian-noise copy of it; accuracy per corruption."""
    noisy = apply_corruption(CorruptionOp("gaussian_noise", sigma), train_pool.X, seed, index=2000)
    X = np.concatenate([train_pool.X, noisy])
    y = np.concatenate([train_pool.y, train_pool.y])
    fg, _ = train(f_init, X, y, epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed)
    return fg, [accuracy(fg, t.X, t.y) for t in corrupted_tests(corruptions, test, seed)]


def report_csv(rows):
    """Per-setup report. The mode is left out so equal setups give equal bytes."""
    lines = ["corruption,n_c,corrupted_acc,clean_acc"]
    lines += [f"{r['corruption']},{r['n_c']},{float(r['corrupted_acc'])!r},{float(r['clean_acc'])!r}" for r in rows]
    return "\n".join(lines) + "\n"


def table_csv(corruption_names, plain, gauss, results):
    """Wide table: one row per corruption plus a clean row.

    ``plain`` and ``gauss`` hold one accuracy per corruption followed by the
    clean accuracy. ``results`` maps ``(mode, n_c)`` to run_setup rows;
    columns are Plain, Gauss, then Separate/Joint per N_c.
    """
    keys = sorted(results, key=lambda k: (k[0] != "separate", k[1]))
    head = ["corruption", "Plain", "Gauss"] + [f"{m.capitalize()}(N_c={n})" for m, n in keys]
    lines = [",".join(head)]
    for i, name in enumerate(corruption_names):
        vals = [plain[i], gauss[i]] + [results[k][i]["corrupted_acc"] for k in keys]
        lines.append(",".join([name] + [f"{v:.4f}" for v in vals]))
    clean_vals = [plain[-1], gauss[-1]] + [float(np.mean([r["clean_acc"] for r in results[k]])) for k in keys]
    lines.append(",".join(["clean"] + [f"{v:.4f}" for v in clean_vals]))
    return "\n".join(lines) + "\n"
