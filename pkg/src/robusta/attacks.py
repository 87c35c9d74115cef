"""Gradient attacks and the ensemble + binary-search margin estimator.

All attacks run on batches (one point per row). The attack loss uses the
model's own prediction at x, never the ground-truth label.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InputShapeError, NotAdversarialError, NumericError
from .model_core import (ConstantClassifier, DifferentiableModel, LinearClassifier, as_batch,
                         clip_unit)

SOURCES = ("FGSM", "PGD", "BG")


@dataclass(frozen=True)
class PGDConfig:
    eps: float = 0.5
    step_size: float = 0.05
    steps: int = 40


@dataclass(frozen=True)
class BGConfig:
    max_iters: int = 50
    init_step: float = 1.0
    backtrack_factor: float = 0.5
    overshoot: float = 0.02
    max_backtracks: int = 12


@dataclass(frozen=True)
class AttackConfig:
    fgsm_eps: float = 0.3
    pgd: PGDConfig = field(default_factory=PGDConfig)
    bg: BGConfig = field(default_factory=BGConfig)
    binary_search_tol: float = 1e-6
    metric: str = "l2"

    def __post_init__(self):
        if self.metric not in ("l2", "linf"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        vals = [self.fgsm_eps, self.pgd.eps, self.pgd.step_size, self.binary_search_tol,
                self.bg.init_step, self.bg.backtrack_factor]
        if min(vals) <= 0 or self.pgd.steps < 1 or self.bg.max_iters < 1:
            raise ConfigError("attack hyperparameters must be positive")
        if self.bg.backtrack_factor >= 1:
            raise ConfigError("backtrack_factor must be < 1")

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        try:
            pgd = PGDConfig(**doc.pop("pgd", {}))
            bg = BGConfig(**doc.pop("bg", {}))
            return cls(pgd=pgd, bg=bg, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad attack config: {exc}") from None

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MarginRecord:
    x: np.ndarray
    x_star: np.ndarray
    source: str | None
    distance: float
    flipped: bool
    multi_crossing: bool = False


def diameter(m, metric="l2"):
    return math.sqrt(m) if metric == "l2" else 1.0


def norm(V, metric="l2"):
    return np.linalg.norm(V, ord=2 if metric == "l2" else np.inf, axis=-1)


def as_differentiable(f, m):
    if isinstance(f, DifferentiableModel):
        return f
    if isinstance(f, LinearClassifier):
        return f.as_model()
    if isinstance(f, ConstantClassifier):
        return f.as_model(m)
    raise TypeError(f"cannot attack a {type(f).__name__}; it exposes no gradients")


def _grad(model, X, y):
    g = model.loss_grad_input(X, y)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite input gradient")
    return g


def _labels(y, n):
    return np.broadcast_to(np.asarray(y, dtype=np.int64), (n,)).copy()


def fgsm(model, x, y_pred, eps):
    """One signed-gradient step of size eps, clipped to the hypercube."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    X, single = as_batch(x, model.n_inputs)
    out = clip_unit(X + eps * np.sign(_grad(model, X, _labels(y_pred, len(X)))))
    return out[0] if single else out


def pgd(model, x, y_pred, cfg=PGDConfig(), metric="linf"):
    """Projected gradient ascent on the cross-entropy of ``y_pred``."""
    if cfg.steps < 1:
        raise ValueError("steps must be >= 1")
    X0, single = as_batch(x, model.n_inputs)
    y = _labels(y_pred, len(X0))
    X = X0.copy()
    if cfg.eps > 0:
        for _ in range(cfg.steps):
            g = _grad(model, X, y)
            if metric == "linf":
                X = X + cfg.step_size * np.sign(g)
                X = np.clip(X, X0 - cfg.eps, X0 + cfg.eps)
            else:
                gn = np.linalg.norm(g, axis=1, keepdims=True)
                X = X + cfg.step_size * np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
                delta = X - X0
                dn = np.linalg.norm(delta, axis=1, keepdims=True)
                X = X0 + delta * np.minimum(1.0, cfg.eps / np.maximum(dn, 1e-300))
            X = clip_unit(X)
    return X[0] if single else X


def _gap_and_grad(model, X, y0):
    """Top-2 logit gap z[y0] - max_{j != y0} z[j] and its input gradient."""
    cache = model.forward_cache(X)
    z = cache[1][-1]
    n = len(X)
    rows = np.arange(n)
    masked = z.copy()
    masked[rows, y0] = -np.inf
    j = np.argmax(masked, axis=1)
    gap = z[rows, y0] - z[rows, j]
    gp = np.zeros_like(z)
    gp[rows, y0] = 1.0
    gp[rows, j] -= 1.0
    _, gx = model.backward(cache, grad_pre=gp)
    return gap, gx


def _descent_step(gap, g, metric, overshoot):
    # linearized step that would bring the gap to zero, with a small overshoot
    if metric == "linf":
        scale = np.sum(np.abs(g), axis=1)
        step = -(gap / np.maximum(scale, 1e-300))[:, None] * np.sign(g)
    else:
        scale = np.sum(g * g, axis=1)
        step = -(gap / np.maximum(scale, 1e-300))[:, None] * g
    return step * (1.0 + overshoot), scale > 0


def boundary_gradient(model, x, cfg=BGConfig(), metric="l2"):
    """Boundary-gradient attack: descend the top-2 logit gap with backtracking.

    Stops per point at the first label flip or after ``max_iters``. Returns
    ``(last_iterates, flipped)``.
    """
    if cfg.max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    X0, single = as_batch(x, model.n_inputs)
    y0 = model.predict(X0)
    X = X0.copy()
    flipped = np.zeros(len(X), dtype=bool)
    active = np.ones(len(X), dtype=bool)
    for _ in range(cfg.max_iters):
        idx = np.flatnonzero(active)
        if len(idx) == 0:
            break
        gap, g = _gap_and_grad(model, X[idx], y0[idx])
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gap gradient")
        step, movable = _descent_step(gap, g, metric, cfg.overshoot)
        active[idx[~movable]] = False
        pending = np.flatnonzero(movable)
        alpha = cfg.init_step
        for _ in range(cfg.max_backtracks + 1):
            if len(pending) == 0:
                break
            rows = idx[pending]
            cand = clip_unit(X[rows] + alpha * step[pending])
            cgap, _ = _gap_and_grad(model, cand, y0[rows])
            ok = (cgap < gap[pending]) | (model.predict(cand) != y0[rows])
            X[rows[ok]] = cand[ok]
            pending = pending[~ok]
            alpha *= cfg.backtrack_factor
        # no decrease at any step length: stuck
        active[idx[pending]] = False
        now = model.predict(X[idx]) != y0[idx]
        flipped[idx[now]] = True
        active[idx[now]] = False
    if single:
        return X[0], bool(flipped[0])
    return X, flipped


def binary_search_refine(model, x, x_adv, tol=1e-6, n_scan=8, return_flags=False):
    """Pull an adversarial point back along the segment to the first label change.

    Returns the adversarial-side endpoint ``x + t_hi (x_adv - x)`` with the
    bracket ``t_hi - t_lo`` at most ``tol / |x_adv - x|``. A coarse scan first
    looks for earlier crossings; when the segment crosses more than once the
    earliest bracket is kept and the point is flagged.
    """
    X, single = as_batch(x, model.n_inputs)
    A, _ = as_batch(x_adv, model.n_inputs)
    y0 = model.predict(X)
    if np.any(model.predict(A) == y0):
        raise NotAdversarialError("x_adv has the same label as x")
    D = A - X
    length = np.linalg.norm(D, axis=1)
    n = len(X)
    t_lo = np.zeros(n)
    t_hi = np.ones(n)
    multi = np.zeros(n, dtype=bool)
    if n_scan > 0:
        ts = np.arange(1, n_scan + 1) / (n_scan + 1)
        flips = np.stack([model.predict(X + t * D) != y0 for t in ts], axis=1)
        first = np.where(flips.any(axis=1), flips.argmax(axis=1), n_scan)
        for k in range(n):
            f = first[k]
            if f < n_scan:
                t_hi[k] = ts[f]
                t_lo[k] = ts[f - 1] if f > 0 else 0.0
                multi[k] = not flips[k, f:].all()
            else:
                t_lo[k] = ts[-1]
    need = np.where(length > 0, (t_hi - t_lo) * length / tol, 1.0)
    iters = int(np.ceil(np.log2(max(need.max(), 1.0)))) + 1
    for _ in range(iters):
        mid = 0.5 * (t_lo + t_hi)
        flip = model.predict(X + mid[:, None] * D) != y0
        t_hi = np.where(flip, mid, t_hi)
        t_lo = np.where(flip, t_lo, mid)
    out = X + t_hi[:, None] * D
    if single:
        out, multi = out[0], bool(multi[0])
    return (out, multi) if return_flags else out


def ensemble_adversarial(f, x, cfg=AttackConfig()):
    """Closest refined adversarial example among FGSM, PGD and BG candidates.

    Returns a MarginRecord for a single point, a list for a batch. Points no
    attack flips get ``distance = diameter`` and ``flipped = False``.
    """
    X, single = as_batch(x)
    m = X.shape[1]
    model = as_differentiable(f, m)
    if X.shape[1] != model.n_inputs:
        raise InputShapeError("point dimension does not match the model")
    metric = cfg.metric
    d = diameter(m, metric)
    y0 = model.predict(X)
    cands = {
        "FGSM": fgsm(model, X, y0, cfg.fgsm_eps),
        "PGD": pgd(model, X, y0, cfg.pgd, metric),
        "BG": boundary_gradient(model, X, cfg.bg, metric)[0],
    }
    n = len(X)
    best = np.full(n, np.inf)
    best_pt = X.copy()
    best_src = [None] * n
    best_multi = np.zeros(n, dtype=bool)
    for src in SOURCES:
        C = cands[src]
        hit = np.flatnonzero(model.predict(C) != y0)
        if len(hit) == 0:
            continue
        ref, multi = binary_search_refine(model, X[hit], C[hit], cfg.binary_search_tol, return_flags=True)
        dist = norm(ref - X[hit], metric)
        better = dist < best[hit]
        rows = hit[better]
        best[rows] = dist[better]
        best_pt[rows] = ref[better]
        best_multi[rows] = multi[better]
        for r in rows:
            best_src[r] = src
    records = []
    for i in range(n):
        ok = best_src[i] is not None
        records.append(MarginRecord(X[i].copy(), best_pt[i], best_src[i],
                                    float(best[i]) if ok else d, ok, bool(best_multi[i])))
    return records[0] if single else records


def source_breakdown(records):
    """Percentage of closest adversarial examples contributed by each attack."""
    counts = Counter(r.source for r in records if r.flipped)
    total = sum(counts.values())
    out = {s: (100.0 * counts[s] / total if total else 0.0) for s in SOURCES}
    out["unflipped"] = sum(1 for r in records if not r.flipped)
    out["n"] = len(records)
    return out
