"""Robustness measures, functions and scores of a classifier.

rho(x) is the probability that a draw from Q(.|x) keeps f's label at x. A
robustness function is H(rho(x)) G(x); integrating it over the hypercube (G = 1)
or against the data distribution (G = p) gives a score, and integrating scores
over a kernel family gives a family score. With ball kernels and the indicator H,
rho(x) = 1 exactly when the margin at x is at least epsilon, so those scores are
computed from margins.
"""

from __future__ import annotations

import dataclasses
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import seeding
from .attacks import AttackConfig, ensemble_adversarial
from .estimates import Estimate, binomial, mean_of, weighted_mean
from .kernels import DegenerateKernel, KernelFamily, PerturbationKernel, UniformBallKernel
from .kernels import label_preserving_epsilon
from .model_core import ConstantClassifier, LabeledDataset, LinearClassifier, as_batch, linear_margin


class H(str, enum.Enum):
    INDICATOR = "indicator"
    IDENTITY = "identity"

    def __call__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if self is H.INDICATOR:
            return (p == 1.0).astype(np.float64)
        return p


class ConstantOne:
    """G(x) = 1: integrate over the hypercube with Lebesgue measure."""

    def __call__(self, x):
        return 1.0

    def __repr__(self):
        return "ConstantOne()"


@dataclass(frozen=True, eq=False)
class EmpiricalDensity:
    """G = p for the empirical distribution of a dataset.

    As a function it returns the probability mass the dataset puts on x.
    """

    dataset: LabeledDataset

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        hit = np.all(self.dataset.X == x[None, :], axis=1)
        return float(self.dataset.probabilities()[hit].sum())


# --------------------------------------------------------------------------
# margin oracles


def _dim(f, X=None):
    if X is not None:
        return X.shape[1]
    if hasattr(f, "n_inputs"):
        return f.n_inputs
    raise ValueError("cannot infer input dimension; set RobustnessSpec.dim")


def _diameter(m, metric):
    return math.sqrt(m) if metric == "l2" else 1.0


@dataclass(frozen=True)
class MarginOracle:
    """Per-point margin estimator. NaN entries mark failures."""

    kind: str
    estimator: Callable = field(repr=False)

    def margins(self, f, X, metric="l2"):
        X, _ = as_batch(X)
        return np.asarray(self.estimator(f, X, metric), dtype=np.float64)


def _analytic(f, X, metric):
    if isinstance(f, ConstantClassifier):
        return np.full(len(X), np.inf)
    if isinstance(f, LinearClassifier):
        return linear_margin(f, X, metric)
    raise TypeError("the analytic oracle handles linear and constant classifiers only")


def analytic_linear_oracle():
    return MarginOracle("analytic_linear", _analytic)


def attack_ensemble_oracle(config=None):
    config = config or AttackConfig()

    def est(f, X, metric):
        if isinstance(f, ConstantClassifier):
            return np.full(len(X), np.inf)
        cfg = config if config.metric == metric else AttackConfig(
            config.fgsm_eps, config.pgd, config.bg, config.binary_search_tol, metric)
        return np.array([r.distance for r in ensemble_adversarial(f, X, cfg)])

    return MarginOracle("attack_ensemble", est)


def dense_sampling_oracle(n_directions=256, n_radii=64, seed=0):
    """Margin upper bound from ray searches along random directions.

    Each ray is scanned on a radius grid inside the hypercube and the first
    crossing is bisected; the smallest crossing distance is returned (inf if
    no ray leaves the decision region).
    """

    def est(f, X, metric):
        m = X.shape[1]
        d = _diameter(m, metric)
        out = np.full(len(X), np.inf)
        radii = np.linspace(d / n_radii, d, n_radii)
        for i, x in enumerate(X):
            gen = seeding.rng(seed, seeding.SAMPLE, i)
            if metric == "l2":
                U = gen.standard_normal((n_directions, m))
                U /= np.linalg.norm(U, axis=1, keepdims=True)
            else:
                U = gen.choice([-1.0, 1.0], size=(n_directions, m))
            y0 = f.predict(x[None, :])[0]
            P = x[None, None, :] + radii[None, :, None] * U[:, None, :]
            inside = np.all((P >= 0) & (P <= 1), axis=2)
            lab = f.predict(P.reshape(-1, m)).reshape(n_directions, n_radii)
            flip = (lab != y0) & inside
            has = flip.any(axis=1)
            if not has.any():
                continue
            k = flip.argmax(axis=1)[has]
            Uh = U[has]
            lo = np.where(k > 0, radii[np.maximum(k - 1, 0)], 0.0)
            hi = radii[k]
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                fl = f.predict(x[None, :] + mid[:, None] * Uh) != y0
                hi = np.where(fl, mid, hi)
                lo = np.where(fl, lo, mid)
            out[i] = hi.min()
        return out

    return MarginOracle("dense_sampling", est)


def min_oracle(*oracles):
    """Pointwise minimum of several upper-bound oracles (NaN where all fail).

    Useful when a model masks its gradients: a gradient-free scan then still
    finds the nearby boundary the attacks miss.
    """
    if not oracles:
        raise ValueError("need at least one oracle")

    def est(f, X, metric):
        M = np.stack([o.margins(f, X, metric) for o in oracles])
        with np.errstate(invalid="ignore"):
            return np.where(np.all(np.isnan(M), axis=0), np.nan, np.nanmin(np.where(np.isnan(M), np.inf, M), axis=0))

    return MarginOracle("min(" + ",".join(o.kind for o in oracles) + ")", est)


def default_oracle(f):
    if isinstance(f, (LinearClassifier, ConstantClassifier)):
        return analytic_linear_oracle()
    return attack_ensemble_oracle()


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True, eq=False)
class RobustnessSpec:
    kernel: PerturbationKernel | None = None
    family: KernelFamily | None = None
    H: H = H.IDENTITY
    G: object = field(default_factory=ConstantOne)
    n_inner: int = 1000
    n_outer: int = 1000
    eps_grid: np.ndarray | None = None
    seed: int = 0
    oracle: MarginOracle | None = None
    dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "H", H(self.H))
        if self.n_inner < 1 or self.n_outer < 1:
            raise ValueError("sample counts must be >= 1")
        if self.eps_grid is not None:
            g = np.asarray(self.eps_grid, dtype=np.float64)
            if g.ndim != 1 or len(g) < 1 or np.any(np.diff(g) <= 0):
                raise ValueError("eps_grid must be strictly increasing")
            if self.family is not None:
                lo, hi = self.family.param_domain
                if g[0] < lo or g[-1] > hi * (1 + 1e-12):
                    raise ValueError("eps_grid leaves the family's parameter domain")
            object.__setattr__(self, "eps_grid", g)

    def grid(self):
        if self.eps_grid is not None:
            return self.eps_grid
        lo, hi = self.family.param_domain
        return np.linspace(lo, hi, 64)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# --------------------------------------------------------------------------
# rho and robustness functions


def rho(f, Q, x, n, seed=0, index=0):
    """Monte-Carlo estimate of the basic robustness measure at x."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    S = Q.sample(x, n, seed, index)
    y0 = f.predict(x[None, :])[0]
    return binomial(int(np.sum(f.predict(S) == y0)), n)


def _uses_margin(Q, h):
    return h is H.INDICATOR and isinstance(Q, (UniformBallKernel, DegenerateKernel))


def _oracle(f, spec):
    return spec.oracle or default_oracle(f)


def _point_values(f, Q, h, X, spec, margins=None):
    """H(rho(x_i)) per point with a per-point standard error."""
    if _uses_margin(Q, h):
        if isinstance(Q, DegenerateKernel):
            return np.ones(len(X)), np.zeros(len(X))
        if margins is None:
            margins = _oracle(f, spec).margins(f, X, Q.metric)
        return (margins >= Q.epsilon).astype(np.float64), np.zeros(len(X))
    vals = np.empty(len(X))
    ses = np.empty(len(X))
    for i, x in enumerate(X):
        r = rho(f, Q, x, spec.n_inner, spec.seed, index=i)
        vals[i] = h(r.value)
        # for the sampled indicator this is an upper-biased check: no
        # counterexample among n_inner draws
        ses[i] = r.stderr
    return vals, ses


def robustness_function(f, Q, h, G, x, spec=None):
    """H(rho(x)) G(x); ball kernels with the indicator go through the margin."""
    spec = spec or RobustnessSpec()
    h = H(h)
    x = np.asarray(x, dtype=np.float64)
    vals, _ = _point_values(f, Q, h, x[None, :], spec)
    return float(vals[0] * G(x))


def _outer_points(f, spec):
    if isinstance(spec.G, EmpiricalDensity):
        ds = spec.G.dataset
        return ds.X, ds.probabilities()
    m = spec.dim or _dim(f)
    gen = seeding.rng(spec.seed, seeding.OUTER)
    return gen.random((spec.n_outer, m)), None


def _aggregate(vals, ses, weights):
    if weights is None:
        # uniform hypercube sampling, volume 1
        return mean_of(vals)
    w = weights / weights.sum()
    return Estimate(weighted_mean(vals, weights), float(math.sqrt(np.sum((w * ses) ** 2))), len(vals))


def score_Q(f, Q, h, G, spec=None):
    """Single-kernel score R_{Q,H,G} with a standard error.

    G = EmpiricalDensity averages over the dataset (weights respected); the
    error then only reflects inner sampling. G = ConstantOne averages over
    ``n_outer`` uniform hypercube points.
    """
    spec = (spec or RobustnessSpec()).replace(G=G, H=H(h), kernel=Q)
    X, w = _outer_points(f, spec)
    vals, ses = _point_values(f, Q, spec.H, X, spec)
    return _aggregate(vals, ses, w)


def score_family(f, family, h, G, spec=None):
    """Family score: trapezoid quadrature of score_Q(kernel_at(eps)) q(eps).

    The quadrature is normalised by its own mass of q, so a classifier with
    R = 1 at every grid point scores exactly 1.
    """
    spec = (spec or RobustnessSpec(family=family)).replace(G=G, H=H(h), family=family)
    grid = spec.grid()
    lo, hi = family.param_domain
    if grid[0] < lo or grid[-1] > hi * (1 + 1e-12):
        raise ValueError("eps_grid leaves the family's parameter domain")
    q = np.asarray(family.density(grid), dtype=np.float64)
    wq = _trapezoid_weights(grid) * q
    mass = math.fsum(wq)
    if not mass > 0:
        raise ValueError("the family density has no mass on eps_grid")
    X, w = _outer_points(f, spec)
    last = family.kernel_at(grid[-1])
    if spec.H is H.INDICATOR and isinstance(last, UniformBallKernel):
        # margins once; the indicator is 1 on a prefix of the grid
        margins = _oracle(f, spec).margins(f, X, last.metric)
        k = np.sum(margins[:, None] >= grid[None, :], axis=1)
        prefix = np.array([math.fsum(wq[:j]) for j in range(len(grid) + 1)])
        per_point = prefix[k] / mass
        if w is None:
            return mean_of(per_point)
        return Estimate(weighted_mean(per_point, w), 0.0, len(per_point))
    scores = []
    for eps in grid:
        vals, ses = _point_values(f, family.kernel_at(eps), spec.H, X, spec)
        scores.append(_aggregate(vals, ses, w))
    R = np.array([s.value for s in scores])
    se = np.array([s.stderr for s in scores])
    # grid-point errors combined as if independent
    return Estimate(weighted_mean(R, wq), float(math.sqrt(np.sum((wq * se) ** 2))) / mass,
                    sum(s.n for s in scores))


def _trapezoid_weights(grid):
    if len(grid) < 2:
        return np.zeros(len(grid))
    dx = np.diff(grid)
    w = np.zeros(len(grid))
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


# --------------------------------------------------------------------------
# margin curves


@dataclass(frozen=True, eq=False)
class MarginCurve:
    eps: np.ndarray
    R: np.ndarray
    stderr: np.ndarray
    n: int
    n_failed: int = 0
    margins: np.ndarray | None = None

    def __iter__(self):
        return iter(zip(self.eps.tolist(), self.R.tolist()))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("epsilon,R,stderr,n\n")
        for e, r, s in zip(self.eps, self.R, self.stderr):
            buf.write(f"{float(e)!r},{float(r)!r},{float(s)!r},{self.n}\n")
        return buf.getvalue()


def margin_curve(f, dataset, eps_grid, oracle=None, metric="l2"):
    """Weighted fraction of dataset points whose margin is at least eps, per eps.

    Oracle failures (NaN margins) are excluded and counted in ``n_failed``.
    """
    grid = np.asarray(eps_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("eps_grid must be non-negative and strictly increasing")
    oracle = oracle or default_oracle(f)
    d = _diameter(dataset.m, metric)
    margins = np.minimum(oracle.margins(f, dataset.X, metric), d)
    ok = ~np.isnan(margins)
    w = dataset.probabilities()[ok]
    mk = margins[ok]
    R = np.array([weighted_mean(mk >= e, w) for e in grid])
    n = int(ok.sum())
    R = np.clip(R, 0.0, 1.0)
    se = np.sqrt(R * (1 - R) / max(n, 1))
    return MarginCurve(grid, R, se, n, int((~ok).sum()), margins)


def auc_margin_curve(curve):
    """Trapezoid area under a margin curve (0 for a single grid point)."""
    if isinstance(curve, MarginCurve):
        eps, R = curve.eps, curve.R
    else:
        pts = list(curve)
        if not pts:
            raise ValueError("empty curve")
        eps = np.array([p[0] for p in pts], dtype=np.float64)
        R = np.array([p[1] for p in pts], dtype=np.float64)
    if np.any(np.diff(eps) <= 0):
        raise ValueError("curve epsilons must be strictly ascending")
    if len(eps) < 2:
        return 0.0
    return float(np.trapezoid(R, eps))


def average_margin(f, data=None, oracle=None, *, n=10_000, seed=0, dim=None, metric="l2"):
    """Mean margin clipped to the hypercube diameter.

    ``data`` is a LabeledDataset (weights respected) or None for ``n`` uniform
    hypercube points.
    """
    oracle = oracle or default_oracle(f)
    if data is None:
        m = dim or _dim(f)
        X = seeding.rng(seed, seeding.OUTER).random((n, m))
        w = None
    else:
        X, w = data.X, data.probabilities()
    d = _diameter(X.shape[1], metric)
    margins = np.minimum(oracle.margins(f, X, metric), d)
    ok = ~np.isnan(margins)
    return mean_of(margins[ok], None if w is None else w[ok])


# --------------------------------------------------------------------------
# accuracy under shift


def prop1_bound(alpha, epsilon, delta):
    """Lower bound alpha - epsilon - delta on accuracy under Q o P."""
    for name, v in (("alpha", alpha), ("epsilon", epsilon), ("delta", delta)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    return alpha - epsilon - delta


@dataclass(frozen=True)
class Prop1Report:
    alpha: float
    eps_hat: float
    delta_hat: float
    accuracy_under_QP: float
    bound: float
    stderr: float
    holds_with_slack: bool

    def to_dict(self):
        return dict(self.__dict__)


def prop1_verify(f, Q, dataset, labeler, spec=None):
    """Check accuracy under Q o P against alpha - eps - delta, all estimated.

    P is the (weighted) empirical distribution of ``dataset``; alpha is exact on
    it, the other terms are Monte-Carlo estimates. The check allows three
    combined standard errors.
    """
    spec = spec or RobustnessSpec()
    p = dataset.probabilities()
    alpha = weighted_mean(f.predict(dataset.X) == labeler.predict(dataset.X), p)
    eps = label_preserving_epsilon(Q, dataset, labeler, spec.n_outer, spec.n_inner, spec.seed)
    r = score_Q(f, Q, H.IDENTITY, EmpiricalDensity(dataset), spec)
    delta = 1.0 - r.value
    gen = seeding.rng(spec.seed, seeding.OUTER, 1)
    pick = gen.choice(len(dataset), size=spec.n_outer * spec.n_inner, p=p)
    Xs = Q.sample_rows(dataset.X[pick], spec.seed + 1)
    acc = binomial(int(np.sum(f.predict(Xs) == labeler.predict(Xs))), len(Xs))
    bound = alpha - eps.value - delta
    se = math.sqrt(acc.stderr ** 2 + eps.stderr ** 2 + r.stderr ** 2)
    return Prop1Report(alpha, eps.value, delta, acc.value, bound, se, acc.value >= bound - 3 * se)
